#pragma once

#include "stealth/feature_cloud.hpp"

#include <cstdint>
#include <vector>

namespace stealth {

/// Largest cloud scanned exhaustively in auto mode (about 4e8 ordered pairs).
inline constexpr Eigen::Index kExactPairLimit = 20000;

struct SeparabilityOptions {
  enum class Mode { automatic, exact, sampled };
  Mode mode = Mode::automatic;
  /// Pairs drawn in sampled mode (required when sampling is used).
  std::uint64_t sampled_pairs = 0;
  std::uint64_t seed = 0;
};

struct Separability {
  double p_hat = 0.0;
  std::uint64_t separable_pairs = 0;
  std::uint64_t pairs_evaluated = 0;
};

/// Separability-based intrinsic dimension n = -1 - log2(p_hat) at threshold delta.
struct DimEstimate {
  double delta = 0.0;
  double n_hat = 0.0;  // +infinity when p_hat == 0
  double p_hat = 0.0;
  std::uint64_t separable_pairs = 0;
  std::uint64_t pairs_evaluated = 0;
  /// -1 - log2 of an upper confidence bound on p: 3/pairs when no pair separates
  /// (rule of three), the one-sided 95% Clopper-Pearson bound otherwise.
  double n_lower_bound = 0.0;
};

/// Fraction of ordered pairs (i != j) with <x_i - x_j, x_j> >= delta.
Separability separability_probability(const FeatureCloud& cloud, double delta,
                                      const SeparabilityOptions& options = {});

DimEstimate intrinsic_dimension(const FeatureCloud& cloud, double delta,
                                const SeparabilityOptions& options = {});

/// One estimate per delta (ascending), computed in a single scan.
std::vector<DimEstimate> dimension_profile(const FeatureCloud& cloud, const std::vector<double>& deltas,
                                           const SeparabilityOptions& options = {});

/// Turns raw counts into an estimate.
DimEstimate estimate_from_counts(double delta, std::uint64_t separable, std::uint64_t pairs);

}  // namespace stealth
