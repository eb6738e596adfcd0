#include "stealth/report.hpp"

#include "stealth/error.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace stealth {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string config_hash(const nlohmann::json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
  return buf;
}

Summary summarise(const std::vector<double>& values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

nlohmann::json to_json(const Summary& s) { return {{"mean", s.mean}, {"std", s.std}, {"count", s.count}}; }

nlohmann::json finite_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); }

nlohmann::json strip_timestamp(nlohmann::json report) {
  report.erase("timestamp");
  return report;
}

namespace {

void check_rate(const nlohmann::json& j, const std::string& key, const std::string& where,
                std::vector<std::string>& problems) {
  if (!j.contains(key)) {
    problems.push_back(where + ": missing " + key);
    return;
  }
  const auto& v = j.at(key);
  if (v.is_null()) return;
  if (!v.is_number() || v.get<double>() < 0.0 || v.get<double>() > 1.0)
    problems.push_back(where + ": " + key + " is not a rate in [0, 1]");
}

void check_summary(const nlohmann::json& j, const std::string& key, const std::string& where, bool nullable,
                   bool positive, bool rate, std::vector<std::string>& problems) {
  if (!j.contains(key)) {
    problems.push_back(where + ": missing " + key);
    return;
  }
  const auto& s = j.at(key);
  if (s.is_null()) {
    if (!nullable) problems.push_back(where + ": " + key + " must not be null");
    return;
  }
  for (const char* f : {"mean", "std", "count"})
    if (!s.contains(f) || !s.at(f).is_number()) problems.push_back(where + ": " + key + "." + f + " missing");
  if (!s.contains("count") || !s.at("count").is_number() || s.at("count").get<double>() == 0) return;
  const double mean = s.at("mean").get<double>();
  if (positive && !(mean > 0.0)) problems.push_back(where + ": " + key + ".mean must be > 0");
  if (rate && (mean < 0.0 || mean > 1.0)) problems.push_back(where + ": " + key + ".mean is not a rate");
}

}  // namespace

std::vector<std::string> validate_report(const nlohmann::json& r) {
  std::vector<std::string> problems;
  if (!r.is_object()) return {"report is not an object"};
  if (r.value("schema_version", "") != kReportSchemaVersion) problems.push_back("schema_version must be \"1\"");
  for (const char* k : {"kind", "seed", "config_hash", "timestamp", "config", "model", "layers"})
    if (!r.contains(k)) problems.push_back(std::string("missing ") + k);
  if (!r.contains("layers") || !r.at("layers").is_array()) return problems;
  for (const auto& l : r.at("layers")) {
    const std::string where = "layer " + (l.contains("layer") ? l.at("layer").dump() : std::string("?"));
    for (const char* k : {"layer", "requested", "completed", "samples", "failures", "theoretical_fpr"})
      if (!l.contains(k)) problems.push_back(where + ": missing " + k);
    check_rate(l, "edit_success_rate", where, problems);
    check_rate(l, "solver_monotone_rate", where, problems);
    check_rate(l, "detector_fpr_any", where, problems);
    check_summary(l, "perplexity_ratio", where, false, true, false, problems);
    check_summary(l, "pruning_control", where, true, true, false, problems);
    check_summary(l, "detector_fpr", where, false, false, true, problems);
    check_summary(l, "empirical_thm3_fpr", where, true, false, true, problems);
    if (l.contains("theoretical_fpr")) {
      const auto& t = l.at("theoretical_fpr");
      for (const char* k : {"delta", "n_hat", "n_lower_bound"})
        if (!t.contains(k)) problems.push_back(where + ": theoretical_fpr." + k + " missing");
      check_rate(t, "from_n_hat", where + " theoretical_fpr", problems);
      check_rate(t, "from_n_lower_bound", where + " theoretical_fpr", problems);
    }
  }
  return problems;
}

std::string bound_table_csv(const nlohmann::json& report) {
  std::ostringstream out;
  out.precision(17);
  out << "layer,delta,n_hat,n_lower_bound,fpr_bound,empirical_fpr\n";
  for (const auto& l : report.at("layers")) {
    const auto& t = l.at("theoretical_fpr");
    const auto num = [](const nlohmann::json& v) {
      if (v.is_null()) return std::string("inf");
      std::ostringstream s;
      s.precision(17);
      s << v.get<double>();
      return s.str();
    };
    const auto& fpr = l.at("detector_fpr");
    out << l.at("layer").get<int>() << ',' << num(t.at("delta")) << ',' << num(t.at("n_hat")) << ','
        << num(t.at("n_lower_bound")) << ',' << num(t.at("from_n_hat")) << ','
        << (fpr.at("count").get<std::size_t>() > 0 ? num(fpr.at("mean")) : std::string("")) << '\n';
  }
  return out.str();
}

void write_report(const std::filesystem::path& dir, const nlohmann::json& report) {
  std::filesystem::create_directories(dir);
  std::ofstream json_out(dir / "report.json");
  if (!json_out) throw PipelineError("cannot write " + (dir / "report.json").string());
  json_out << report.dump(2) << '\n';
  std::ofstream csv_out(dir / "bounds.csv");
  if (!csv_out) throw PipelineError("cannot write " + (dir / "bounds.csv").string());
  csv_out << bound_table_csv(report);
}

}  // namespace stealth
