#pragma once

#include "stealth/feature_cloud.hpp"
#include "stealth/intrinsic_dimension.hpp"

#include <cstdint>
#include <utility>

namespace stealth {

/// Smallest <x - y, y> over pairs in the activation cap of (tau, theta, c):
/// 2(1 - theta - <tau, c>)^2/|tau - c|^2 - 2.
double delta_edit(double theta, const Vector& tau, const Vector& c);

/// Lower bound on delta_edit over all unit tau for a centre of norm c_norm.
double delta_hat(double theta, double c_norm);

/// Separation threshold for a trigger sampled against a fixed prompt feature phi:
/// 2(1 - theta + <phi, c>)^2/|phi + c|^2 - 2.
double epsilon_trigger(double theta, const Vector& phi, const Vector& c);

/// 2^{-(1 + n)/2}; 0 for infinite n.
double worst_case_fpr(double n);

struct BoundResult {
  double delta = 0.0;
  DimEstimate n_at_delta;
  double fpr_bound = 0.0;      // from n_hat
  double fallback_bound = 0.0; // from n_lower_bound, always finite and conservative
};

/// n(cloud, delta_edit(theta, tau, c)) and the resulting false-positive bound.
BoundResult guaranteed_fpr_for_edit(const FeatureCloud& cloud, double theta, const Vector& tau, const Vector& c,
                                    const SeparabilityOptions& options = {});

/// Bound from a precomputed estimate.
BoundResult bound_from_estimate(const DimEstimate& estimate);

enum class CapSampler { automatic, rejection, inverse_cdf };

/// Uniform unit vectors in {z : <z - tau, tau - c> + theta >= 0}.
/// Rejection sampling proposes uniform points on the sphere and aborts (PipelineError)
/// once the acceptance rate is below 1e-6 after 1e6 proposals. The inverse-CDF sampler
/// draws the axial coordinate from its exact Beta law and is used by `automatic`
/// whenever the cap holds less than 1e-3 of the sphere.
FeatureCloud sample_cap(const Vector& tau, double theta, const Vector& c, Eigen::Index count,
                        std::uint64_t seed, CapSampler sampler = CapSampler::automatic);

/// Fraction of the sphere covered by the cap.
double cap_mass(const Vector& tau, double theta, const Vector& c);

/// Two boundary points of the cap on opposite sides of its axis; <x - y, y> equals delta_edit.
std::pair<Vector, Vector> antipodal_cap_pair(const Vector& tau, double theta, const Vector& c);

/// min over ordered pairs i != j of <x_i - x_j, x_j>.
double min_pair_statistic(const RowMatrix& x);

/// One-sided binomial test: P(X >= hits | Bin(trials, bound)) >= 1 - confidence.
/// True when `hits` activations out of `trials` are compatible with rate <= bound.
bool within_binomial_margin(std::uint64_t hits, std::uint64_t trials, double bound, double confidence = 0.99);

}  // namespace stealth
