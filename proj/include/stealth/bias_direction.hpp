#pragma once

#include "stealth/feature_cloud.hpp"

#include <json.hpp>

namespace stealth {

/// Direction v with near-constant projection <phi, v> ~ 1 over a feature cloud,
/// standing in for the missing bias of RMSNorm blocks.
struct BiasDirection {
  Vector v;
  Vector train_mean;  // mu of the training cloud; <mu, v> = 1
  double train_mean_proj = 0.0;
  double train_proj_std = 0.0;
  Eigen::Index training_size = 0;
  /// mu has a component outside range(C); v was taken from that null-space component.
  bool degenerate = false;
};

/// Relative eigenvalue cutoff for the pseudo-inverse of C.
inline constexpr double kPinvCutoff = 1e-10;

/// Minimises (1/N) sum <phi_i - mu, u>^2 subject to <mu, u> = 1, via v = C^+ mu / <C^+ mu, mu>.
/// When mu leaves range(C) the minimum is 0, attained by the normalised null-space part of mu.
BiasDirection compute_bias_direction(const FeatureCloud& cloud);

/// (1/N) sum <phi_i - mu, u>^2.
double bias_objective(const FeatureCloud& cloud, const Vector& u);

struct ProjectionStats {
  double mean = 0.0;
  double std = 0.0;
  double min = 0.0;
};

/// Statistics of <phi_i, v> over a held-out cloud.
ProjectionStats validate_bias_direction(const BiasDirection& bd, const FeatureCloud& test_cloud);

nlohmann::json to_json(const BiasDirection& bd);
BiasDirection bias_direction_from_json(const nlohmann::json& j);

}  // namespace stealth
