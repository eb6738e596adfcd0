#include "stealth/theory.hpp"

#include "stealth/error.hpp"
#include "stealth/kernels.hpp"

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/special_functions/beta.hpp>

#include <cmath>
#include <limits>
#include <random>

namespace stealth {

namespace {

void check_cap(double theta, const Vector& tau, const Vector& c) {
  require(tau.size() >= 2, "cap: dimension must be at least 2");
  require(c.size() == tau.size(), "cap: centre dimension mismatch");
  require(std::abs(tau.norm() - 1.0) <= 1e-9, "cap: tau must be a unit vector");
  require(theta >= 0.0, "cap: theta must be non-negative");
  require(c.norm() < 1.0 - theta, "cap: |c| must be below 1 - theta");
}

struct CapAxis {
  Vector axis;    // (tau - c)/|tau - c|
  double kappa;   // cap is {z : <z, axis> >= kappa}
};

CapAxis cap_axis(const Vector& tau, double theta, const Vector& c) {
  const Vector diff = tau - c;
  const double n = diff.norm();
  return {diff / n, (1.0 - theta - tau.dot(c)) / n};
}

Vector unit_orthogonal(const Vector& a, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  for (;;) {
    Vector w(a.size());
    for (Eigen::Index k = 0; k < w.size(); ++k) w(k) = normal(rng);
    w -= w.dot(a) * a;
    const double n = w.norm();
    if (n > 1e-12) return w / n;
  }
}

Vector uniform_sphere(Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  for (;;) {
    Vector z(d);
    for (Eigen::Index k = 0; k < d; ++k) z(k) = normal(rng);
    const double n = z.norm();
    if (n > 0.0) return z / n;
  }
}

bool in_cap(const Vector& z, const Vector& tau, const Vector& c, double theta) {
  return (z - tau).dot(tau - c) + theta >= 0.0;
}

}  // namespace

double delta_edit(double theta, const Vector& tau, const Vector& c) {
  check_cap(theta, tau, c);
  const double num = 1.0 - theta - tau.dot(c);
  return 2.0 * num * num / (tau - c).squaredNorm() - 2.0;
}

double delta_hat(double theta, double c_norm) {
  require(theta >= 0.0, "delta_hat: theta must be non-negative");
  require(c_norm >= 0.0 && c_norm < 1.0 - theta, "delta_hat: need 0 <= |c| < 1 - theta");
  if (theta < c_norm * (1.0 - c_norm)) return -2.0 * (2.0 * theta + c_norm * c_norm);
  const double r = 1.0 - c_norm;
  return 2.0 * theta * (theta - 2.0 * r) / (r * r);
}

double epsilon_trigger(double theta, const Vector& phi, const Vector& c) {
  check_cap(theta, phi, c);
  const double num = 1.0 - theta + phi.dot(c);
  return 2.0 * num * num / (phi + c).squaredNorm() - 2.0;
}

double worst_case_fpr(double n) {
  if (std::isinf(n) && n > 0) return 0.0;
  require(!std::isnan(n) && n >= -1.0, "worst_case_fpr: n must be >= -1");
  return std::exp2(-0.5 * (1.0 + n));
}

BoundResult bound_from_estimate(const DimEstimate& estimate) {
  BoundResult r;
  r.delta = estimate.delta;
  r.n_at_delta = estimate;
  r.fpr_bound = worst_case_fpr(estimate.n_hat);
  r.fallback_bound = worst_case_fpr(estimate.n_lower_bound);
  return r;
}

BoundResult guaranteed_fpr_for_edit(const FeatureCloud& cloud, double theta, const Vector& tau, const Vector& c,
                                    const SeparabilityOptions& options) {
  require(cloud.unit_norm, "guaranteed_fpr_for_edit: cloud must lie on the unit sphere");
  const double delta = delta_edit(theta, tau, c);
  return bound_from_estimate(intrinsic_dimension(cloud, delta, options));
}

double cap_mass(const Vector& tau, double theta, const Vector& c) {
  check_cap(theta, tau, c);
  const CapAxis cap = cap_axis(tau, theta, c);
  if (cap.kappa >= 1.0) return 0.0;
  const double a = 0.5 * static_cast<double>(tau.size() - 1);
  return boost::math::ibeta(a, a, 0.5 * (1.0 - cap.kappa));
}

FeatureCloud sample_cap(const Vector& tau, double theta, const Vector& c, Eigen::Index count, std::uint64_t seed,
                        CapSampler sampler) {
  check_cap(theta, tau, c);
  require(count >= 1, "sample_cap: count must be >= 1");
  const Eigen::Index d = tau.size();
  const CapAxis cap = cap_axis(tau, theta, c);
  const double mass = cap_mass(tau, theta, c);
  if (sampler == CapSampler::automatic) sampler = mass >= 1e-3 ? CapSampler::rejection : CapSampler::inverse_cdf;

  std::mt19937_64 rng(seed);
  RowMatrix out(count, d);
  if (sampler == CapSampler::rejection) {
    std::uint64_t proposals = 0;
    Eigen::Index accepted = 0;
    while (accepted < count) {
      const Vector z = uniform_sphere(d, rng);
      ++proposals;
      if (in_cap(z, tau, c, theta)) out.row(accepted++) = z.transpose();
      if (proposals >= 1000000 && static_cast<double>(accepted) < 1e-6 * static_cast<double>(proposals))
        throw PipelineError("sample_cap: acceptance rate below 1e-6 (cap mass " + std::to_string(mass) + ")");
    }
  } else {
    // (1 - t)/2 ~ Beta((d-1)/2, (d-1)/2) for the axial coordinate t of a uniform point;
    // truncating to t >= kappa means drawing the CDF level from [0, mass].
    require(mass > 0.0, "sample_cap: cap has zero mass");
    const double a = 0.5 * static_cast<double>(d - 1);
    std::uniform_real_distribution<double> level(0.0, mass);
    for (Eigen::Index i = 0; i < count; ++i) {
      const double s = boost::math::ibeta_inv(a, a, level(rng));
      const double t = std::min(1.0, std::max(cap.kappa, 1.0 - 2.0 * s));
      const Vector w = unit_orthogonal(cap.axis, rng);
      Vector z = t * cap.axis + std::sqrt(std::max(0.0, 1.0 - t * t)) * w;
      z /= z.norm();
      out.row(i) = z.transpose();
    }
  }
  FeatureCloud cloud;
  cloud.vectors = std::move(out);
  cloud.unit_norm = true;
  cloud.source_tag = "cap_sample";
  return cloud;
}

std::pair<Vector, Vector> antipodal_cap_pair(const Vector& tau, double theta, const Vector& c) {
  check_cap(theta, tau, c);
  const CapAxis cap = cap_axis(tau, theta, c);
  Eigen::Index k = 0;
  cap.axis.cwiseAbs().minCoeff(&k);
  Vector w = Vector::Unit(tau.size(), k);
  w -= w.dot(cap.axis) * cap.axis;
  w.normalize();
  const double side = std::sqrt(std::max(0.0, 1.0 - cap.kappa * cap.kappa));
  return {cap.kappa * cap.axis + side * w, cap.kappa * cap.axis - side * w};
}

double min_pair_statistic(const RowMatrix& x) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.rows(); ++j)
      if (i != j) best = std::min(best, kernels::pair_statistic(x.row(i).data(), x.row(j).data(), x.cols()));
  return best;
}

bool within_binomial_margin(std::uint64_t hits, std::uint64_t trials, double bound, double confidence) {
  require(trials >= 1, "within_binomial_margin: no trials");
  require(hits <= trials, "within_binomial_margin: more hits than trials");
  require(confidence > 0.0 && confidence < 1.0, "within_binomial_margin: confidence must lie in (0, 1)");
  if (hits == 0) return true;
  if (bound <= 0.0) return false;
  if (bound >= 1.0) return true;
  const boost::math::binomial_distribution<double> dist(static_cast<double>(trials), bound);
  const double p_value = boost::math::cdf(boost::math::complement(dist, static_cast<double>(hits - 1)));
  return p_value >= 1.0 - confidence;
}

}  // namespace stealth
