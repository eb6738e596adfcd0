#include "stealth/feature_cloud.hpp"

#include "stealth/container.hpp"
#include "stealth/error.hpp"
#include "stealth/model_io.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace stealth {

void FeatureCloud::validate(Eigen::Index min_rows) const {
  require(size() >= min_rows, "feature cloud needs at least " + std::to_string(min_rows) + " vectors");
  if (unit_norm) {
    for (Eigen::Index i = 0; i < size(); ++i)
      require(std::abs(vectors.row(i).norm() - 1.0) <= 1e-5,
              "feature cloud flagged unit_norm has an off-sphere row " + std::to_string(i));
  }
}

FeatureCloud make_cloud(const std::vector<Vector>& rows, std::string source_tag) {
  require(!rows.empty(), "make_cloud: no rows");
  FeatureCloud c;
  c.source_tag = std::move(source_tag);
  c.vectors.resize(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  bool unit = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i].size() == rows.front().size(), "make_cloud: ragged rows");
    c.vectors.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    unit = unit && std::abs(rows[i].norm() - 1.0) <= 1e-5;
  }
  c.unit_norm = unit;
  return c;
}

void save_cloud(const std::filesystem::path& path, const FeatureCloud& cloud) {
  nlohmann::json header = {{"format_version", kSnapshotFormatVersion},
                           {"kind", "feature_cloud"},
                           {"N", cloud.size()},
                           {"d", cloud.dim()},
                           {"unit_norm", cloud.unit_norm},
                           {"source_tag", cloud.source_tag}};
  write_container(path, std::move(header), {pack("vectors", cloud.vectors)});
}

void save_cloud_csv(const std::filesystem::path& path, const FeatureCloud& cloud) {
  std::ofstream os(path);
  if (!os) throw PipelineError("cannot open " + path.string());
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    for (Eigen::Index j = 0; j < cloud.dim(); ++j) os << (j ? "," : "") << cloud.vectors(i, j);
    os << '\n';
  }
}

namespace {

FeatureCloud load_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw PipelineError("cannot open " + path.string());
  std::vector<Vector> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ValidationError("bad CSV value '" + cell + "' in " + path.string());
      }
    }
    rows.push_back(from_std(vals));
  }
  return make_cloud(rows, path.filename().string());
}

}  // namespace

FeatureCloud load_cloud(const std::filesystem::path& path) {
  if (path.extension() == ".csv") return load_csv(path);
  const Container c = read_container(path);
  if (c.header.value("kind", "") != "feature_cloud") throw PipelineError(path.string() + " is not a feature cloud");
  FeatureCloud cloud;
  cloud.vectors = unpack_row_matrix(c.at("vectors"));
  cloud.unit_norm = c.header.at("unit_norm").get<bool>();
  cloud.source_tag = c.header.value("source_tag", "");
  if (cloud.size() != c.header.at("N").get<Eigen::Index>() || cloud.dim() != c.header.at("d").get<Eigen::Index>())
    throw PipelineError("feature cloud header disagrees with its array");
  return cloud;
}

}  // namespace stealth
