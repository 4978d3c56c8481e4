#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "mixenv/errors.hpp"
#include "mixenv/io.hpp"
#include "mixenv/rng.hpp"

using namespace mixenv;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "1.0.0";

struct RunConfig {
    std::string command;
    std::string input;
    std::string output;
    std::optional<int> u;
    int max_iter = 2000;
    double tol = 1e-8;
    int bootstrap = 0;
    std::optional<std::uint64_t> seed;
    std::string rng = kRngTag;
    std::string bic = "jtotal";
    std::string impute = "none";
    std::string scenario;
    int replicates = 100;
    int restarts = 3;
    bool timing = false;
};

Json config_json(const RunConfig& c) {
    Json j;
    j["command"] = c.command;
    j["input"] = c.input;
    j["output"] = c.output;
    j["u"] = c.u ? Json(*c.u) : Json(nullptr);
    j["max_iter"] = c.max_iter;
    j["tol"] = c.tol;
    j["bootstrap"] = c.bootstrap;
    j["seed"] = c.seed ? Json(*c.seed) : Json(nullptr);
    j["rng"] = c.rng;
    j["bic"] = c.bic;
    j["impute"] = c.impute;
    j["scenario"] = c.scenario;
    j["replicates"] = c.replicates;
    j["restarts"] = c.restarts;
    j["timing"] = c.timing;
    return j;
}

Json provenance(const RunConfig& c) {
    Json j;
    j["tool"] = "mixenv";
    j["version"] = kVersion;
    j["rng"] = kRngTag;
    j["config"] = config_json(c);
    return j;
}

EnvelopeFitOptions fit_options(const RunConfig& c) {
    EnvelopeFitOptions o;
    o.em.max_iter = c.max_iter;
    o.em.delta_tol = c.tol;
    o.restarts = c.restarts;
    o.bic_penalty = c.bic == "n" ? BicPenalty::log_n : BicPenalty::log_jtotal;
    o.validate();
    return o;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

void validate(const RunConfig& c) {
    require(!c.output.empty(), "--output is required");
    require(c.rng == kRngTag, "--rng: only " + std::string(kRngTag) + " is available");
    require(!c.u || *c.u >= 0, "--u must be >= 0");
    require(c.max_iter >= 1, "--max-iter must be >= 1");
    require(c.tol > 0, "--tol must be positive");
    require(c.bootstrap == 0 || c.bootstrap >= 2, "--bootstrap must be 0 or >= 2");
    require(c.replicates >= 1, "--replicates must be >= 1");
    require(c.restarts >= 0, "--restarts must be >= 0");
    if (c.command == "fit" || c.command == "select") {
        require(!c.input.empty(), c.command + " needs --input");
        require(c.bootstrap == 0 || c.seed.has_value(), "--bootstrap needs --seed");
    }
    if (c.command == "select") require(!c.u, "select chooses u itself; drop --u");
    if (c.command == "simulate" || c.command == "bench") {
        require(!c.scenario.empty(), c.command + " needs --scenario");
        require(c.seed.has_value(), c.command + " needs --seed");
    }
    if (c.command == "demo") require(c.seed.has_value(), "demo needs --seed");
}

std::string path_in(const RunConfig& c, const std::string& name) { return (fs::path(c.output) / name).string(); }

// parameter,row,col,value[,se columns]
std::string estimates_csv(const FitResult& fit, const std::vector<std::pair<std::string, Matrix>>& se) {
    std::ostringstream out;
    out << "parameter,row,col,value";
    for (const auto& s : se) out << ',' << s.first;
    out << '\n';
    auto emit = [&](const std::string& name, const Matrix& m, bool with_se) {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
                out << name << ',' << i + 1 << ',' << j + 1 << ',' << format_number(m(i, j));
                for (const auto& s : se) out << ',' << (with_se ? format_number(s.second(i, j)) : "");
                out << '\n';
            }
    };
    const NaturalParams& t = fit.theta_hat;
    emit("beta", t.beta, true);
    emit("alpha", t.alpha, false);
    emit("sigma_eps", t.sigma_eps, false);
    emit("sigma_b", t.sigma_b, false);
    if (fit.phi_hat) emit("gamma", fit.phi_hat->gamma, false);
    return out.str();
}

std::string trace_csv(const FitResult& fit) {
    std::ostringstream out;
    out << "iteration,loglik\n";
    for (std::size_t k = 0; k < fit.loglik_trace.size(); ++k) out << k + 1 << ',' << format_number(fit.loglik_trace[k]) << '\n';
    return out.str();
}

// Fits at the requested or selected u, adds standard errors, writes artifacts.
int run_fit(const RunConfig& c, bool selecting) {
    const IngestResult in = ingest_csv(c.input, imputation_from_string(c.impute));
    const EnvelopeFitOptions opts = fit_options(c);
    Json result;
    result["provenance"] = provenance(c);
    result["data"] = summary_json(in.summary);

    FitResult fit;
    std::optional<BicSelection> sel;
    if (c.u) {
        require(*c.u <= in.data.r, "--u exceeds the number of responses");
        fit = fit_mixed_envelope(in.data, *c.u, opts);
    } else {
        sel = select_u_bic(in.data, opts);
        fit = sel->best_fit;
        result["selection"] = selection_json(*sel);
    }
    result["u_hat"] = fit.u;
    result["u_selected"] = !c.u.has_value();
    result["fit"] = fit_json(fit);

    std::vector<std::pair<std::string, Matrix>> se;
    Json inf;
    try {
        const AvarPair av = envelope_avar_at(*fit.phi_hat, in.data);
        const Matrix s = standard_errors(beta_block(av.avar_env, in.data.r, in.data.p), in.data.r, in.data.p, in.data.n());
        inf["asymptotic_se"] = matrix_json(s);
        se.emplace_back("se_asymptotic", s);
    } catch (const std::exception& e) {
        inf["asymptotic_se_error"] = e.what();
    }
    if (c.bootstrap > 0) {
        BootstrapSpec spec;
        spec.kind = FitterKind::mixed_envelope;
        spec.u = fit.u;
        spec.options = opts;
        spec.options.em.loglik_check = false;
        spec.warm_phi = fit.phi_hat;
        const BootstrapResult b = bootstrap_se(in.data, spec, c.bootstrap, *c.seed);
        inf["bootstrap_se"] = matrix_json(b.se);
        inf["bootstrap_replicates"] = b.replicates;
        inf["bootstrap_failed"] = b.failed;
        se.emplace_back("se_bootstrap", b.se);
    }
    result["inference"] = std::move(inf);

    fs::create_directories(c.output);
    write_text_file(path_in(c, "result.json"), dump_json(result));
    write_text_file(path_in(c, "estimates.csv"), estimates_csv(fit, se));
    write_text_file(path_in(c, "loglik_trace.csv"), trace_csv(fit));
    if (selecting && sel) {
        std::ostringstream t;
        t << "u,loglik,bic,iterations,converged,failed\n";
        for (const BicEntry& e : sel->table)
            t << e.u << ',' << format_number(e.loglik) << ',' << format_number(e.bic) << ',' << e.iterations << ','
              << e.converged << ',' << e.failed << '\n';
        write_text_file(path_in(c, "bic_table.csv"), t.str());
    }
    return 0;
}

int run_simulate(const RunConfig& c) {
    const SimulationConfig cfg = SimulationConfig::preset(scenario_from_string(c.scenario), *c.seed);
    const Simulation sim = simulate(cfg);
    Json truth;
    truth["provenance"] = provenance(c);
    truth["theta"] = natural_json(sim.theta);
    truth["phi"] = envelope_json(sim.phi);
    fs::create_directories(c.output);
    export_csv(sim.data, path_in(c, "data.csv"));
    write_text_file(path_in(c, "truth.json"), dump_json(truth));
    return 0;
}

std::string demo_tables(const Demo2dReport& rep, std::string& scatter, std::string& density) {
    std::ostringstream est, sc, de;
    est << "method,u,mse,coordinate,estimate\n";
    for (const DemoEstimate& e : rep.estimates)
        for (Eigen::Index k = 0; k < e.beta.rows(); ++k)
            est << e.method << ',' << e.u << ',' << format_number(e.mse) << ',' << k + 1 << ',' << format_number(e.beta(k, 0))
                << '\n';
    sc << "subject,group,time,y1,y2,y1_minus_b1,y2_minus_b2\n";
    for (Eigen::Index i = 0; i < rep.scatter.rows(); ++i) {
        for (Eigen::Index k = 0; k < rep.scatter.cols(); ++k) sc << (k ? "," : "") << format_number(rep.scatter(i, k));
        sc << '\n';
    }
    de << "method,group,direction1,direction2,mean,sd,t,density\n";
    for (const DensityCurve& d : rep.densities)
        for (std::size_t k = 0; k < d.grid.size(); ++k)
            de << d.method << ',' << d.group << ',' << format_number(d.direction(0)) << ',' << format_number(d.direction(1))
               << ',' << format_number(d.mean) << ',' << format_number(d.sd) << ',' << format_number(d.grid[k]) << ','
               << format_number(d.density[k]) << '\n';
    scatter = sc.str();
    density = de.str();
    return est.str();
}

int run_demo(const RunConfig& c) {
    const Demo2dReport rep = run_demo2d(*c.seed);
    Json out;
    out["provenance"] = provenance(c);
    out["report"] = demo_json(rep);
    std::string scatter, density;
    const std::string est = demo_tables(rep, scatter, density);
    fs::create_directories(c.output);
    write_text_file(path_in(c, "report.json"), dump_json(out));
    write_text_file(path_in(c, "estimates.csv"), est);
    write_text_file(path_in(c, "scatter.csv"), scatter);
    write_text_file(path_in(c, "density.csv"), density);
    return 0;
}

int run_bench(const RunConfig& c) {
    const Scenario s = scenario_from_string(c.scenario);
    Json out;
    out["provenance"] = provenance(c);
    std::ostringstream csv;
    if (s == Scenario::demo2d) {
        Json reps = Json::array();
        csv << "replicate,method,mse,u\n";
        for (int k = 0; k < c.replicates; ++k) {
            const Demo2dReport rep = run_demo2d(derive_seed(*c.seed, static_cast<std::uint64_t>(k)));
            for (const DemoEstimate& e : rep.estimates)
                csv << k << ',' << e.method << ',' << format_number(e.mse) << ',' << e.u << '\n';
            reps.push_back(demo_json(rep));
        }
        out["demo_replicates"] = std::move(reps);
    } else {
        const BenchReport rep = run_simulation_study(SimulationConfig::preset(s, *c.seed), c.replicates, *c.seed);
        out["report"] = bench_json(rep, c.timing);
        csv << "replicate,method,error,available\n";
        for (const MethodSeries& m : rep.methods)
            for (std::size_t k = 0; k < m.error.size(); ++k)
                csv << k << ',' << m.method << ',' << format_number(m.error[k]) << ',' << int(m.available[k]) << '\n';
    }
    fs::create_directories(c.output);
    write_text_file(path_in(c, "report.json"), dump_json(out));
    write_text_file(path_in(c, "errors.csv"), csv.str());
    return 0;
}

void write_diagnostics(const RunConfig& c, const std::string& category, const std::string& message) {
    Json d;
    d["category"] = category;
    d["message"] = message;
    d["provenance"] = provenance(c);
    const std::string text = dump_json(d);
    if (c.output.empty()) {
        std::cerr << text;
        return;
    }
    try {
        fs::create_directories(c.output);
        write_text_file(path_in(c, "diagnostics.json"), text);
    } catch (const std::exception&) {
        std::cerr << text;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixed effects envelope estimation for multivariate longitudinal data"};
    app.set_version_flag("--version", kVersion);
    RunConfig c;
    app.add_option("command", c.command, "fit | select | simulate | bench | demo")
        ->required()
        ->check(CLI::IsMember({"fit", "select", "simulate", "bench", "demo"}));
    app.add_option("--input", c.input, "long-format CSV: subject,time,y1..yr,x1..xp,z1..zq");
    app.add_option("--output", c.output, "output directory");
    app.add_option("--u", c.u, "envelope dimension (fit); selected by BIC when omitted");
    app.add_option("--max-iter", c.max_iter, "EM iteration cap")->capture_default_str();
    app.add_option("--tol", c.tol, "convergence tolerance on the relative change of beta")->capture_default_str();
    app.add_option("--bootstrap", c.bootstrap, "bootstrap replicates, 0 disables")->capture_default_str();
    app.add_option("--seed", c.seed, "seed for stochastic commands");
    app.add_option("--rng", c.rng, "random number generator tag")->capture_default_str();
    app.add_option("--bic", c.bic, "BIC penalty sample size")->check(CLI::IsMember({"jtotal", "n"}))->capture_default_str();
    app.add_option("--impute", c.impute, "missing-cell handling")->check(CLI::IsMember({"none", "mean"}))->capture_default_str();
    app.add_option("--scenario", c.scenario, "simulation scenario")
        ->check(CLI::IsMember({"demo2d", "balanced_main", "unbalanced_main"}));
    app.add_option("--replicates", c.replicates, "bench replicates")->capture_default_str();
    app.add_option("--restarts", c.restarts, "random 1D restarts per column")->capture_default_str();
    app.add_flag("--timing", c.timing, "include wall-clock seconds in bench output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        validate(c);
        if (c.command == "fit") return run_fit(c, false);
        if (c.command == "select") return run_fit(c, true);
        if (c.command == "simulate") return run_simulate(c);
        if (c.command == "bench") return run_bench(c);
        return run_demo(c);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const SingularCovarianceError& e) {
        write_diagnostics(c, "singular_covariance", e.what());
    } catch (const DesignError& e) {
        write_diagnostics(c, "design", e.what());
    } catch (const InformationSingularError& e) {
        write_diagnostics(c, "information_singular", e.what());
    } catch (const UnstableBootstrapError& e) {
        write_diagnostics(c, "unstable_bootstrap", e.what());
    } catch (const std::exception& e) {
        write_diagnostics(c, "numerical", e.what());
    }
    std::cerr << "numerical failure, see diagnostics.json\n";
    return 3;
}
