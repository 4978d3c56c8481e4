#pragma once
#include <map>
#include <string>
#include <vector>
#include "mixenv/bench.hpp"
#include "mixenv/inference.hpp"

#include <json.hpp>

namespace mixenv {

using Json = nlohmann::ordered_json;

enum class Imputation { none, mean };
std::string to_string(Imputation m);
Imputation imputation_from_string(const std::string& s);

struct IngestSummary {
    int n = 0, r = 0, p = 0, q = 0;
    std::map<int, int> j_counts;  ///< J_i -> number of subjects
    int imputed_cells = 0;
};

struct IngestResult {
    LongitudinalDataset data;
    std::vector<std::string> subject_ids;     ///< in order of first appearance
    std::vector<std::vector<double>> times;   ///< per subject, ascending
    IngestSummary summary;
};

/// Long format: subject,time,y1..yr,x1..xp,z1..zq. Throws DataError on
/// malformed input.
IngestResult ingest_csv(const std::string& path, Imputation imputation = Imputation::none);
IngestResult ingest_csv_text(const std::string& text, Imputation imputation = Imputation::none);

/// Writes the long format with 17 significant digits. Empty ids/times
/// default to 1..n and 0..J_i-1.
void export_csv(const LongitudinalDataset& data, const std::string& path,
                const std::vector<std::string>& subject_ids = {},
                const std::vector<std::vector<double>>& times = {});
std::string export_csv_text(const LongitudinalDataset& data, const std::vector<std::string>& subject_ids = {},
                            const std::vector<std::vector<double>>& times = {});

/// %.17g
std::string format_number(double v);

/// {"rows": r, "cols": c, "data": [...]} with data in column-major order.
Json matrix_json(const Matrix& m);
Json natural_json(const NaturalParams& theta);
Json envelope_json(const EnvelopeParams& phi);
Json fit_json(const FitResult& fit);
Json selection_json(const BicSelection& sel);
Json summary_json(const IngestSummary& s);
Json bench_json(const BenchReport& rep, bool include_timing = false);
Json demo_json(const Demo2dReport& rep);

/// Numbers go through format_number so files carry 17 significant digits.
std::string dump_json(const Json& j);

void write_text_file(const std::string& path, const std::string& text);

}  // namespace mixenv
