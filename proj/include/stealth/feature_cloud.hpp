#pragma once

#include "stealth/linalg.hpp"

#include <filesystem>
#include <string>

namespace stealth {

/// N x d feature vectors, one per row.
struct FeatureCloud {
  RowMatrix vectors;
  bool unit_norm = false;
  std::string source_tag;

  Eigen::Index size() const { return vectors.rows(); }
  Eigen::Index dim() const { return vectors.cols(); }

  /// Throws ValidationError if N < min_rows or a unit_norm row is off the sphere by > 1e-5.
  void validate(Eigen::Index min_rows = 2) const;
};

/// Builds a cloud from rows; sets unit_norm when every row is within 1e-5 of the sphere.
FeatureCloud make_cloud(const std::vector<Vector>& rows, std::string source_tag);

/// Binary container: header {format_version, kind: "feature_cloud", N, d, unit_norm,
/// source_tag}, one array "vectors" (N x d row-major binary64).
void save_cloud(const std::filesystem::path& path, const FeatureCloud& cloud);
/// Reads either the binary container or, for paths ending in .csv, a headerless CSV
/// with one vector per line.
FeatureCloud load_cloud(const std::filesystem::path& path);
void save_cloud_csv(const std::filesystem::path& path, const FeatureCloud& cloud);

}  // namespace stealth
