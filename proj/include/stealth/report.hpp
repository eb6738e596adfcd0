#pragma once

// Evaluation report, schema version "1":
//
// {
//   "schema_version": "1", "kind", "seed", "config_hash", "timestamp", "config", "model",
//   "layers": [{
//     "layer", "requested", "completed",
//     "edit_success_rate",                       // [0, 1]
//     "solver_monotone_rate",                    // [0, 1]
//     "perplexity_ratio": {"mean", "std", "count"},
//     "pruning_control": {"mean", "std", "count"} | null,
//     "detector_fpr": {"mean", "std", "count"},  // realised neurons, test cloud
//     "detector_fpr_any",                        // any detector fires
//     "empirical_thm3_fpr": {"mean", "std", "count", "compliant_rate"} | null,
//     "theoretical_fpr": {"delta", "n_hat", "n_lower_bound", "from_n_hat", "from_n_lower_bound"},
//     "samples": [...], "failures": [{"sample", "stage", "message"}], "extra": {...}
//   }]
// }
//
// n_hat is null when infinite. The CSV bound table has the columns
// layer,delta,n_hat,n_lower_bound,fpr_bound,empirical_fpr.

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace stealth {

inline constexpr const char* kReportSchemaVersion = "1";

std::uint64_t fnv1a64(std::string_view bytes);
/// 16 hex digits of fnv1a64 over the compact JSON dump.
std::string config_hash(const nlohmann::json& config);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t count = 0;
};
Summary summarise(const std::vector<double>& values);
nlohmann::json to_json(const Summary& s);

/// Problems found in a report; empty when it conforms to the schema.
std::vector<std::string> validate_report(const nlohmann::json& report);

std::string bound_table_csv(const nlohmann::json& report);

/// Writes <dir>/report.json and <dir>/bounds.csv.
void write_report(const std::filesystem::path& dir, const nlohmann::json& report);

/// JSON with a non-finite number written as null.
nlohmann::json finite_or_null(double x);

/// The report without its timestamp, for determinism comparisons.
nlohmann::json strip_timestamp(nlohmann::json report);

}  // namespace stealth
