#include "stealth/error.hpp"
#include "stealth/theory.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace stealth;
using namespace testing_support;

namespace {

Vector centre_inside(Eigen::Index d, double theta, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 0.999 * (1.0 - theta));
  return u(rng) * unit_vector(d, rng);
}

FeatureCloud make_cloud_from_rows(const RowMatrix& rows, const std::string& tag) {
  std::vector<Vector> v;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) v.push_back(rows.row(i).transpose());
  return make_cloud(v, tag);
}

}  // namespace

TEST_CASE("delta_edit at the origin") {
  std::mt19937_64 rng(1);
  const Vector tau = unit_vector(7, rng);
  const Vector zero = Vector::Zero(7);
  for (double theta : {0.0, 0.005, 0.1, 0.5, 0.9}) {
    CHECK(delta_edit(theta, tau, zero) == doctest::Approx(2.0 * theta * (theta - 2.0)).epsilon(1e-14));
    CHECK(epsilon_trigger(theta, tau, zero) == doctest::Approx(2.0 * theta * (theta - 2.0)).epsilon(1e-14));
  }
  CHECK(delta_edit(0.0, tau, zero) == doctest::Approx(0.0));
  CHECK(delta_edit(0.005, tau, zero) == doctest::Approx(-0.01995).epsilon(1e-12));
  CHECK_THROWS_AS(delta_edit(0.5, tau, Vector(0.6 * tau)), ValidationError);
  CHECK_THROWS_AS(delta_edit(0.5, Vector(2.0 * tau), zero), ValidationError);
}

// Minimum of delta_edit over unit tau, scanning t = <tau, c> on a fine grid.
double delta_edit_min_over_tau(double theta, double r) {
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 200000; ++k) {
    const double t = -r + 2.0 * r * k / 200000.0;
    const double num = 1.0 - theta - t;
    best = std::min(best, 2.0 * num * num / (1.0 + r * r - 2.0 * t) - 2.0);
  }
  return best;
}

TEST_CASE("delta_hat branches") {
  // theta < |c|(1 - |c|): interior minimiser t = theta + |c|^2.
  CHECK(delta_hat(0.01, 0.5) == doctest::Approx(-0.54).epsilon(1e-14));
  CHECK(delta_hat(0.2, 0.0) == doctest::Approx(2 * 0.2 * (0.2 - 2.0)));
  CHECK(delta_hat(0.3, 0.5) == doctest::Approx(2 * 0.3 * (0.3 - 1.0) / 0.25));
  for (double theta : {0.0, 0.01, 0.1, 0.3})
    for (double r : {0.0, 0.1, 0.5, 0.6})
      if (r < 1.0 - theta) CHECK(delta_hat(theta, r) == doctest::Approx(delta_edit_min_over_tau(theta, r)).epsilon(1e-8));
  CHECK_THROWS_AS(delta_hat(0.5, 0.6), ValidationError);
}

TEST_CASE("delta_hat is a lower bound for delta_edit and epsilon_trigger") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng() % 30);
    const double theta = 0.9 * u(rng) * u(rng);
    const Vector c = centre_inside(d, theta, rng);
    const double lower = delta_hat(theta, c.norm());
    CHECK(lower <= delta_edit(theta, unit_vector(d, rng), c) + 1e-12);
    CHECK(lower <= epsilon_trigger(theta, unit_vector(d, rng), c) + 1e-12);
  }
}

TEST_CASE("worst-case false-positive rate") {
  CHECK(worst_case_fpr(16.7) == doctest::Approx(0.00217).epsilon(0.02));
  CHECK(std::abs(worst_case_fpr(16.7) - 0.00217) < 1e-4);
  CHECK(worst_case_fpr(-1.0) == 1.0);
  CHECK(worst_case_fpr(13.9) == doctest::Approx(std::pow(2.0, -7.45)));
  CHECK(std::abs(worst_case_fpr(13.9) - 0.0057) < 1e-4);
  CHECK(worst_case_fpr(std::numeric_limits<double>::infinity()) == 0.0);
  CHECK_THROWS_AS(worst_case_fpr(-1.5), ValidationError);
}

TEST_CASE("cap samples lie in the cap") {
  std::mt19937_64 rng(3);
  for (CapSampler sampler : {CapSampler::rejection, CapSampler::inverse_cdf}) {
    for (int trial = 0; trial < 10; ++trial) {
      const Eigen::Index d = 3 + trial;
      const double theta = 0.2 + 0.05 * trial;
      const Vector tau = unit_vector(d, rng);
      const Vector c = centre_inside(d, theta, rng) * 0.5;
      const FeatureCloud cloud = sample_cap(tau, theta, c, 500, 10 + trial, sampler);
      CHECK(cloud.unit_norm);
      CHECK(cloud.vectors.rows() == 500);
      for (Eigen::Index i = 0; i < cloud.vectors.rows(); ++i) {
        const Vector z = cloud.vectors.row(i).transpose();
        CHECK(std::abs(z.norm() - 1.0) < 1e-12);
        CHECK((z - tau).dot(tau - c) + theta >= -1e-12);
      }
    }
  }
}

TEST_CASE("cap samplers agree in distribution") {
  std::mt19937_64 rng(4);
  const Vector tau = unit_vector(6, rng);
  const Vector c = 0.2 * unit_vector(6, rng);
  const FeatureCloud a = sample_cap(tau, 0.4, c, 20000, 1, CapSampler::rejection);
  const FeatureCloud b = sample_cap(tau, 0.4, c, 20000, 2, CapSampler::inverse_cdf);
  const Vector axis = (tau - c).normalized();
  const double mean_a = (a.vectors * axis).mean();
  const double mean_b = (b.vectors * axis).mean();
  CHECK(std::abs(mean_a - mean_b) < 0.01);
  CHECK((a.vectors.colwise().mean() - b.vectors.colwise().mean()).norm() < 0.03);
}

TEST_CASE("cap mass") {
  const Vector tau = Vector::Unit(3, 0);
  const Vector zero = Vector::Zero(3);
  // On S^2 the cap {z1 >= 1 - theta} has area fraction theta/2.
  for (double theta : {0.01, 0.3, 0.9})
    CHECK(cap_mass(tau, theta, zero) == doctest::Approx(theta / 2.0).epsilon(1e-9));
  std::mt19937_64 rng(8);
  const Vector t5 = unit_vector(5, rng);
  const Vector c5 = 0.2 * unit_vector(5, rng);
  const RowMatrix z = sphere_points(200000, 5, rng);
  int inside = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) inside += (z.row(i).transpose() - t5).dot(t5 - c5) + 0.4 >= 0.0;
  const double mass = cap_mass(t5, 0.4, c5);
  CHECK(std::abs(inside / 200000.0 - mass) < 5.0 * std::sqrt(mass * (1 - mass) / 200000.0));
}

TEST_CASE("pairwise minimum within a cap is bounded by delta_edit") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Vector tau = unit_vector(8, rng);
    const Vector c = trial % 2 ? Vector(0.3 * unit_vector(8, rng)) : Vector(Vector::Zero(8));
    const FeatureCloud cloud = sample_cap(tau, 0.1, c, 600, 20 + trial);
    const double delta = delta_edit(0.1, tau, c);
    CHECK(min_pair_statistic(cloud.vectors) >= delta - 1e-9);

    const auto [x, y] = antipodal_cap_pair(tau, 0.1, c);
    CHECK(std::abs(x.norm() - 1.0) < 1e-12);
    CHECK(std::abs((x - tau).dot(tau - c) + 0.1) < 1e-12);
    CHECK(std::abs((y - tau).dot(tau - c) + 0.1) < 1e-12);
    CHECK(std::abs((x - y).dot(y) - delta) < 1e-9);
  }
}

TEST_CASE("min pair statistic matches a direct scan") {
  std::mt19937_64 rng(6);
  const RowMatrix x = sphere_points(40, 4, rng);
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < 40; ++i)
    for (Eigen::Index j = 0; j < 40; ++j)
      if (i != j) best = std::min(best, (x.row(i) - x.row(j)).dot(x.row(j)));
  CHECK(min_pair_statistic(x) == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("bounds from clouds") {
  std::mt19937_64 rng(7);
  const Vector tau = unit_vector(6, rng);
  RowMatrix same(50, 6);
  for (Eigen::Index i = 0; i < 50; ++i) same.row(i) = tau.transpose();
  const FeatureCloud point_mass = make_cloud_from_rows(same, "point");
  const BoundResult pm = guaranteed_fpr_for_edit(point_mass, 0.005, tau, Vector::Zero(6));
  CHECK(pm.n_at_delta.n_hat == -1.0);
  CHECK(pm.fpr_bound == 1.0);

  const FeatureCloud sphere = make_cloud_from_rows(sphere_points(2000, 32, rng), "sphere");
  const BoundResult sb = guaranteed_fpr_for_edit(sphere, 0.005, unit_vector(32, rng), Vector::Zero(32));
  CHECK(sb.delta == doctest::Approx(-0.01995));
  CHECK(sb.fpr_bound < 1e-3);
  CHECK(sb.fallback_bound >= sb.fpr_bound);
  CHECK(std::isfinite(sb.fallback_bound));
}

TEST_CASE("binomial margin") {
  CHECK(within_binomial_margin(0, 1000, 0.001));
  CHECK(within_binomial_margin(3, 1000, 0.001));
  CHECK_FALSE(within_binomial_margin(10, 1000, 0.001));
  CHECK(within_binomial_margin(520, 1000, 0.5));
  CHECK_FALSE(within_binomial_margin(600, 1000, 0.5));
  CHECK(within_binomial_margin(1000, 1000, 1.0));
  CHECK_FALSE(within_binomial_margin(1, 1000, 0.0));
}

TEST_CASE("rejection sampling aborts on tiny caps; automatic falls back") {
  const Vector tau = Vector::Unit(64, 0);
  const Vector zero = Vector::Zero(64);
  CHECK(cap_mass(tau, 0.005, zero) < 1e-6);
  CHECK_THROWS_AS(sample_cap(tau, 0.005, zero, 10, 1, CapSampler::rejection), PipelineError);
  const FeatureCloud cloud = sample_cap(tau, 0.005, zero, 100, 1);
  for (Eigen::Index i = 0; i < cloud.vectors.rows(); ++i) CHECK(cloud.vectors(i, 0) >= 1.0 - 0.005 - 1e-12);
  CHECK(bitwise_equal(cloud.vectors, sample_cap(tau, 0.005, zero, 100, 1).vectors));
}
