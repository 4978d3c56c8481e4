#include "mixenv/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mixenv/errors.hpp"

namespace mixenv {

std::string to_string(Imputation m) { return m == Imputation::mean ? "mean" : "none"; }

Imputation imputation_from_string(const std::string& s) {
    if (s == "none") return Imputation::none;
    if (s == "mean") return Imputation::mean;
    throw ConfigError("unknown imputation mode: " + s);
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

bool is_missing_token(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "."; }

bool parse_double(const std::string& s, double& v) {
    if (s.empty()) return false;
    try {
        std::size_t pos = 0;
        v = std::stod(s, &pos);
        return pos == s.size() && std::isfinite(v);
    } catch (const std::exception&) {
        return false;
    }
}

// Counts a contiguous run prefix1, prefix2, ... starting at column `start`.
int count_block(const std::vector<std::string>& header, std::size_t start, char prefix) {
    int k = 0;
    while (start + k < header.size() && header[start + k] == std::string(1, prefix) + std::to_string(k + 1)) ++k;
    return k;
}

struct RawRow {
    std::string subject;
    double time = 0.0;
    std::vector<double> values;
    std::size_t line = 0;
};

}  // namespace

IngestResult ingest_csv_text(const std::string& text, Imputation imputation) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) {
            header = split_csv_line(line);
            break;
        }
    }
    if (header.size() < 3 || header[0] != "subject" || header[1] != "time")
        throw DataError("csv: header must start with subject,time");
    const int r = count_block(header, 2, 'y');
    const int p = count_block(header, 2 + r, 'x');
    const int q = count_block(header, 2 + r + p, 'z');
    if (r < 1 || p < 1) throw DataError("csv: need at least one y and one x column");
    const std::size_t width = 2 + static_cast<std::size_t>(r + p + q);
    if (header.size() != width) throw DataError("csv: unexpected column '" + header[std::min(width, header.size() - 1)] + "'");

    const std::size_t nv = width - 2;
    std::vector<RawRow> rows;
    std::vector<std::vector<std::size_t>> missing(nv);
    std::vector<double> col_sum(nv, 0.0);
    std::vector<int> col_count(nv, 0);
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != width)
            throw DataError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(width) + " cells, got " +
                            std::to_string(cells.size()));
        RawRow row;
        row.line = line_no;
        row.subject = cells[0];
        if (row.subject.empty()) throw DataError("csv line " + std::to_string(line_no) + ": empty subject id");
        if (!parse_double(cells[1], row.time))
            throw DataError("csv line " + std::to_string(line_no) + ": time is not numeric");
        row.values.resize(nv);
        for (std::size_t c = 0; c < nv; ++c) {
            double v = 0.0;
            if (parse_double(cells[c + 2], v)) {
                row.values[c] = v;
                col_sum[c] += v;
                ++col_count[c];
            } else if (imputation == Imputation::mean && is_missing_token(cells[c + 2])) {
                missing[c].push_back(rows.size());
                row.values[c] = 0.0;
            } else {
                throw DataError("csv line " + std::to_string(line_no) + ": column " + header[c + 2] +
                                " is missing or not numeric");
            }
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("csv: no data rows");

    IngestResult res;
    for (std::size_t c = 0; c < nv; ++c) {
        if (missing[c].empty()) continue;
        if (col_count[c] == 0) throw DataError("csv: column " + header[c + 2] + " has no observed values to impute from");
        const double mean = col_sum[c] / col_count[c];
        for (std::size_t k : missing[c]) rows[k].values[c] = mean;
        res.summary.imputed_cells += static_cast<int>(missing[c].size());
    }

    std::map<std::string, std::size_t> index;
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        auto [it, fresh] = index.emplace(rows[k].subject, groups.size());
        if (fresh) {
            groups.emplace_back();
            res.subject_ids.push_back(rows[k].subject);
        }
        groups[it->second].push_back(k);
    }

    LongitudinalDataset& data = res.data;
    data.r = r;
    data.p = p;
    data.q = q;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        auto& ks = groups[g];
        std::stable_sort(ks.begin(), ks.end(), [&](std::size_t a, std::size_t b) { return rows[a].time < rows[b].time; });
        for (std::size_t t = 1; t < ks.size(); ++t)
            if (rows[ks[t]].time == rows[ks[t - 1]].time)
                throw DataError("csv line " + std::to_string(rows[ks[t]].line) + ": duplicated (subject, time) = (" +
                                res.subject_ids[g] + ", " + format_number(rows[ks[t]].time) + ")");
        const auto J = static_cast<Eigen::Index>(ks.size());
        Subject s;
        s.y.resize(r, J);
        s.x.resize(p, J);
        s.z.resize(q, J);
        std::vector<double> times;
        for (Eigen::Index j = 0; j < J; ++j) {
            const RawRow& row = rows[ks[j]];
            times.push_back(row.time);
            for (int a = 0; a < r; ++a) s.y(a, j) = row.values[a];
            for (int a = 0; a < p; ++a) s.x(a, j) = row.values[r + a];
            for (int a = 0; a < q; ++a) s.z(a, j) = row.values[r + p + a];
        }
        ++res.summary.j_counts[static_cast<int>(J)];
        res.times.push_back(std::move(times));
        data.subjects.push_back(std::move(s));
    }
    data.validate();
    res.summary.n = data.n();
    res.summary.r = r;
    res.summary.p = p;
    res.summary.q = q;
    return res;
}

IngestResult ingest_csv(const std::string& path, Imputation imputation) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ingest_csv_text(ss.str(), imputation);
}

std::string format_number(double v) {
    if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string export_csv_text(const LongitudinalDataset& data, const std::vector<std::string>& subject_ids,
                            const std::vector<std::vector<double>>& times) {
    std::ostringstream out;
    out << "subject,time";
    for (int a = 1; a <= data.r; ++a) out << ",y" << a;
    for (int a = 1; a <= data.p; ++a) out << ",x" << a;
    for (int a = 1; a <= data.q; ++a) out << ",z" << a;
    out << '\n';
    for (int i = 0; i < data.n(); ++i) {
        const Subject& s = data.subjects[i];
        const std::string id = subject_ids.empty() ? std::to_string(i + 1) : subject_ids.at(i);
        for (Eigen::Index j = 0; j < s.times(); ++j) {
            out << id << ',' << format_number(times.empty() ? static_cast<double>(j) : times.at(i).at(j));
            for (int a = 0; a < data.r; ++a) out << ',' << format_number(s.y(a, j));
            for (int a = 0; a < data.p; ++a) out << ',' << format_number(s.x(a, j));
            for (int a = 0; a < data.q; ++a) out << ',' << format_number(s.z(a, j));
            out << '\n';
        }
    }
    return out.str();
}

void export_csv(const LongitudinalDataset& data, const std::string& path, const std::vector<std::string>& subject_ids,
                const std::vector<std::vector<double>>& times) {
    write_text_file(path, export_csv_text(data, subject_ids, times));
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path);
    f << text;
    if (!f) throw DataError("write failed for " + path);
}

Json matrix_json(const Matrix& m) {
    Json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    Json data = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) data.push_back(m(r, c));
    j["data"] = std::move(data);
    return j;
}

Json natural_json(const NaturalParams& theta) {
    Json j;
    j["alpha"] = matrix_json(theta.alpha);
    j["beta"] = matrix_json(theta.beta);
    j["sigma_eps"] = matrix_json(theta.sigma_eps);
    j["sigma_b"] = matrix_json(theta.sigma_b);
    return j;
}

Json envelope_json(const EnvelopeParams& phi) {
    Json j;
    j["u"] = phi.u();
    j["gamma"] = matrix_json(phi.gamma);
    j["gamma0"] = matrix_json(phi.complement());
    j["eta"] = matrix_json(phi.eta);
    j["omega"] = matrix_json(phi.omega);
    j["omega0"] = matrix_json(phi.omega0);
    return j;
}

Json fit_json(const FitResult& fit) {
    Json j;
    j["u"] = fit.u;
    j["converged"] = fit.converged;
    j["iterations"] = fit.iterations;
    j["delta_final"] = fit.delta_final;
    j["loglik"] = fit.loglik;
    j["bic"] = fit.bic;
    j["rejected_basis_updates"] = fit.rejected_basis_updates;
    j["message"] = fit.message;
    j["theta"] = natural_json(fit.theta_hat);
    if (fit.phi_hat) j["phi"] = envelope_json(*fit.phi_hat);
    j["loglik_trace"] = fit.loglik_trace;
    return j;
}

Json selection_json(const BicSelection& sel) {
    Json j;
    j["u_hat"] = sel.u_hat;
    j["had_failures"] = sel.had_failures;
    Json table = Json::array();
    for (const BicEntry& e : sel.table) {
        Json row;
        row["u"] = e.u;
        row["loglik"] = e.loglik;
        row["bic"] = e.bic;
        row["iterations"] = e.iterations;
        row["converged"] = e.converged;
        row["failed"] = e.failed;
        row["message"] = e.message;
        table.push_back(std::move(row));
    }
    j["table"] = std::move(table);
    return j;
}

Json summary_json(const IngestSummary& s) {
    Json j;
    j["n"] = s.n;
    j["r"] = s.r;
    j["p"] = s.p;
    j["q"] = s.q;
    Json jc = Json::object();
    for (const auto& [J, count] : s.j_counts) jc[std::to_string(J)] = count;
    j["j_counts"] = std::move(jc);
    j["imputed_cells"] = s.imputed_cells;
    return j;
}

Json bench_json(const BenchReport& rep, bool include_timing) {
    Json j;
    j["scenario"] = rep.scenario;
    j["seed"] = rep.seed;
    j["replicates"] = rep.replicates;
    j["fixed_parameters"] = rep.fixed_parameters;
    Json methods = Json::array();
    for (const MethodSeries& m : rep.methods) {
        Json jm;
        jm["method"] = m.method;
        jm["available"] = m.n_available();
        jm["mean_error"] = m.mean();
        jm["median_error"] = m.median();
        jm["error"] = m.error;
        if (include_timing) jm["seconds"] = m.seconds;
        methods.push_back(std::move(jm));
    }
    j["methods"] = std::move(methods);
    j["u_hat"] = rep.u_hat;
    j["u_hat_response_envelope"] = rep.u_hat_response;
    j["u_histogram"] = rep.u_histogram;
    j["failures"] = rep.failures;
    return j;
}

Json demo_json(const Demo2dReport& rep) {
    Json j;
    j["seed"] = rep.seed;
    j["beta_true"] = matrix_json(rep.beta_true);
    Json est = Json::array();
    for (const DemoEstimate& e : rep.estimates) {
        Json je;
        je["method"] = e.method;
        je["beta"] = matrix_json(e.beta);
        je["mse"] = e.mse;
        je["u"] = e.u;
        est.push_back(std::move(je));
    }
    j["estimates"] = std::move(est);
    j["ratio_mixed_envelope_to_em"] = rep.ratio_mixed_em;
    j["ratio_classic_envelope_to_em"] = rep.ratio_classic_em;
    j["ratio_known_b_envelope_to_ols"] = rep.ratio_known_b;
    return j;
}

namespace {

void dump_value(const Json& j, std::string& out, int indent) {
    const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
    const std::string pad_in(static_cast<std::size_t>(indent + 1) * 2, ' ');
    if (j.is_number_float()) {
        const double v = j.get<double>();
        out += std::isfinite(v) ? format_number(v) : "null";
    } else if (j.is_object()) {
        if (j.empty()) {
            out += "{}";
            return;
        }
        out += "{\n";
        bool first = true;
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!first) out += ",\n";
            first = false;
            out += pad_in + Json(it.key()).dump() + ": ";
            dump_value(it.value(), out, indent + 1);
        }
        out += "\n" + pad + "}";
    } else if (j.is_array()) {
        if (j.empty()) {
            out += "[]";
            return;
        }
        const bool scalars = std::all_of(j.begin(), j.end(), [](const Json& e) { return e.is_primitive(); });
        if (scalars) {
            out += "[";
            for (std::size_t k = 0; k < j.size(); ++k) {
                if (k) out += ", ";
                dump_value(j[k], out, indent + 1);
            }
            out += "]";
            return;
        }
        out += "[\n";
        for (std::size_t k = 0; k < j.size(); ++k) {
            if (k) out += ",\n";
            out += pad_in;
            dump_value(j[k], out, indent + 1);
        }
        out += "\n" + pad + "]";
    } else {
        out += j.dump();
    }
}

}  // namespace

std::string dump_json(const Json& j) {
    std::string out;
    dump_value(j, out, 0);
    out += '\n';
    return out;
}

}  // namespace mixenv
