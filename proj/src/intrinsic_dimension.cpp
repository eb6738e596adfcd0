#include "stealth/intrinsic_dimension.hpp"

#include "stealth/error.hpp"
#include "stealth/kernels.hpp"

#include <boost/math/distributions/binomial.hpp>

#include <cmath>
#include <limits>

namespace stealth {

DimEstimate estimate_from_counts(double delta, std::uint64_t separable, std::uint64_t pairs) {
  require(pairs > 0, "no pairs evaluated");
  DimEstimate e;
  e.delta = delta;
  e.separable_pairs = separable;
  e.pairs_evaluated = pairs;
  e.p_hat = static_cast<double>(separable) / static_cast<double>(pairs);
  double p_upper;
  if (separable == 0) {
    e.n_hat = std::numeric_limits<double>::infinity();
    p_upper = std::min(1.0, 3.0 / static_cast<double>(pairs));
  } else {
    e.n_hat = -1.0 - std::log2(e.p_hat);
    using boost::math::binomial_distribution;
    p_upper = separable == pairs
                  ? 1.0
                  : binomial_distribution<>::find_upper_bound_on_p(static_cast<double>(pairs),
                                                                   static_cast<double>(separable), 0.05);
  }
  e.n_lower_bound = std::min(e.n_hat, -1.0 - std::log2(p_upper));
  return e;
}

namespace {

std::vector<std::uint64_t> scan(const FeatureCloud& cloud, const std::vector<double>& deltas,
                                const SeparabilityOptions& options, std::uint64_t& pairs) {
  require(cloud.size() >= 2, "intrinsic dimension needs N >= 2");
  using Mode = SeparabilityOptions::Mode;
  const bool exact = options.mode == Mode::exact ||
                     (options.mode == Mode::automatic && cloud.size() <= kExactPairLimit);
  if (exact) {
    const auto n = static_cast<std::uint64_t>(cloud.size());
    pairs = n * (n - 1);
    return kernels::parallel::count_separable_pairs(cloud.vectors, deltas);
  }
  require(options.sampled_pairs > 0, "sampled separability needs sampled_pairs > 0");
  pairs = options.sampled_pairs;
  return kernels::parallel::count_separable_sampled(cloud.vectors, deltas,
                                                    {options.seed, options.sampled_pairs});
}

}  // namespace

Separability separability_probability(const FeatureCloud& cloud, double delta,
                                      const SeparabilityOptions& options) {
  std::uint64_t pairs = 0;
  const auto counts = scan(cloud, {delta}, options, pairs);
  return {static_cast<double>(counts[0]) / static_cast<double>(pairs), counts[0], pairs};
}

DimEstimate intrinsic_dimension(const FeatureCloud& cloud, double delta, const SeparabilityOptions& options) {
  return dimension_profile(cloud, {delta}, options).front();
}

std::vector<DimEstimate> dimension_profile(const FeatureCloud& cloud, const std::vector<double>& deltas,
                                           const SeparabilityOptions& options) {
  require(!deltas.empty(), "dimension_profile: no deltas");
  std::uint64_t pairs = 0;
  const auto counts = scan(cloud, deltas, options, pairs);
  std::vector<DimEstimate> out;
  out.reserve(deltas.size());
  for (std::size_t k = 0; k < deltas.size(); ++k) out.push_back(estimate_from_counts(deltas[k], counts[k], pairs));
  return out;
}

}  // namespace stealth
