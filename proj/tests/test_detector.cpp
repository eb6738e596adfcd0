#include "stealth/detector.hpp"
#include "stealth/error.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace stealth;
using namespace testing_support;

namespace {

NormWeights random_layer_norm(Eigen::Index d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.1);
  NormWeights n;
  n.weight.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) n.weight(i) = (rng() % 2 ? 1.0 : -1.0) * mag(rng);
  n.bias = 0.1 * gaussian_vector(d, rng);
  return n;
}

NormWeights random_rms_norm(Eigen::Index d, std::mt19937_64& rng) {
  NormWeights n = random_layer_norm(d, rng);
  n.bias.resize(0);
  return n;
}

Vector small_centre(Eigen::Index d, double radius, std::mt19937_64& rng) {
  return radius * unit_vector(d, rng);
}

}  // namespace

TEST_CASE("alpha follows from theta and the gain") {
  std::mt19937_64 rng(1);
  const DetectorParams p = make_detector_params(unit_vector(8, rng), 0.005, 50.0);
  CHECK(p.alpha() == doctest::Approx(1e4));
  CHECK(p.c.isZero());
}

TEST_CASE("detector parameter validation") {
  std::mt19937_64 rng(2);
  const Vector tau = unit_vector(4, rng);
  CHECK_THROWS_AS(make_detector_params(2.0 * tau, 0.005, 50.0), ValidationError);
  CHECK_THROWS_AS(make_detector_params(tau, 0.0, 50.0), ValidationError);
  CHECK_THROWS_AS(make_detector_params(tau, 0.005, -1.0), ValidationError);
  CHECK_THROWS_AS(make_detector_params(tau, 0.5, 50.0, Vector(0.6 * tau)), ValidationError);
  CHECK_NOTHROW(make_detector_params(tau, 0.5, 50.0, Vector(0.4 * tau)));
}

TEST_CASE("response at the trigger and orthogonal to it") {
  std::mt19937_64 rng(3);
  const Vector tau = unit_vector(6, rng);
  const DetectorParams p = make_detector_params(tau, 0.005, 50.0);
  CHECK(detector_response_on_sphere(tau, p) == doctest::Approx(50.0).epsilon(1e-12));
  Vector ortho = unit_vector(6, rng);
  ortho = (ortho - ortho.dot(tau) * tau).normalized();
  CHECK(detector_response_on_sphere(ortho, p) == doctest::Approx(-9950.0).epsilon(1e-12));
}

TEST_CASE("activation is response >= 0") {
  CHECK(is_activated(0.0));
  CHECK_FALSE(is_activated(-1e-12));
  CHECK(is_activated(50.0));
}

TEST_CASE("gpt neuron reproduces f on the range of LayerNorm") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const NormWeights norm = random_layer_norm(32, rng);
    const double theta = 0.005 + 0.2 * (trial % 3);
    const DetectorParams p =
        make_detector_params(unit_vector(32, rng), theta, 50.0, trial % 2 ? small_centre(32, 0.3, rng) : Vector::Zero(32));
    const ImplantedNeuron n = build_gpt_neuron(p, norm);
    REQUIRE(n.bias.has_value());
    CHECK_FALSE(n.bias_direction.has_value());
    for (int i = 0; i < 50; ++i) {
      const Vector zeta = layer_norm(gaussian_vector(32, rng), norm.weight, norm.bias);
      const double f = detector_response(zeta, p, Family::gpt_style, norm);
      CHECK(std::abs(n.response(zeta) - f) <= 1e-9 * std::max(1.0, std::abs(f)));
    }
    // zeta whose nu image is tau
    const Vector zeta_trig = std::sqrt(32.0) * norm.weight.cwiseProduct(p.tau) + norm.bias;
    CHECK(n.response(zeta_trig) == doctest::Approx(50.0).epsilon(1e-9));
  }
}

TEST_CASE("gpt neuron specialises to a scaled trigger for identity normalisation") {
  std::mt19937_64 rng(5);
  NormWeights norm;
  norm.weight = Vector::Ones(16);
  norm.bias = Vector::Zero(16);
  const DetectorParams p = make_detector_params(unit_vector(16, rng), 0.005, 50.0);
  const ImplantedNeuron n = build_gpt_neuron(p, norm);
  CHECK((n.weight - (p.alpha() / 4.0) * p.tau).norm() < 1e-9);
  CHECK(*n.bias == doctest::Approx(p.alpha() * (0.005 - 1.0)));
}

TEST_CASE("bias-free neuron: trigger response and residual identity") {
  std::mt19937_64 rng(6);
  for (Family family : {Family::llama_style, Family::mamba_style}) {
    for (int trial = 0; trial < 10; ++trial) {
      const NormWeights norm = random_rms_norm(16, rng);
      const Vector x_trig = gaussian_vector(16, rng) + 2.0 * Vector::Ones(16);
      const Vector phi_trig = x_trig.normalized();
      const Vector v = (Vector::Ones(16) / 4.0 + 0.05 * gaussian_vector(16, rng));
      REQUIRE(phi_trig.dot(v) > 0.0);
      const Vector c = trial % 2 ? small_centre(16, 0.2, rng) : Vector::Zero(16);
      const DetectorParams p = make_detector_params(phi_trig, 0.005, 50.0, c);
      const ImplantedNeuron n = build_nobias_neuron(p, v, phi_trig, family, norm);
      CHECK_FALSE(n.bias.has_value());
      REQUIRE(n.bias_direction.has_value());
      CHECK(n.response(rms_norm(x_trig, norm.weight)) == doctest::Approx(50.0).epsilon(1e-9));

      const double offset = (c - p.tau).dot(p.tau) + p.theta;
      for (int i = 0; i < 100; ++i) {
        const Vector psi = rms_norm(gaussian_vector(16, rng), norm.weight);
        const Vector phi = nu_map(family, norm, psi);
        const double f = detector_response(psi, p, family, norm);
        const double expected = f - p.alpha() * (1.0 - phi.dot(v) / phi_trig.dot(v)) * offset;
        CHECK(std::abs(n.response(psi) - expected) <= 1e-9 * std::max(1.0, std::abs(f)));
      }
    }
  }
}

TEST_CASE("bias-free neuron needs a positive trigger projection") {
  NormWeights norm;
  norm.weight = Vector::Ones(4);
  const Vector tau = Vector::Unit(4, 0);
  const Vector v = Vector::Unit(4, 1);
  const DetectorParams p = make_detector_params(tau, 0.005, 50.0);
  CHECK_THROWS_AS(build_nobias_neuron(p, v, tau, Family::llama_style, norm), ValidationError);
  CHECK_THROWS_AS(build_nobias_neuron(p, -tau, tau, Family::llama_style, norm), ValidationError);
  NormWeights ln = norm;
  ln.bias = Vector::Zero(4);
  CHECK_THROWS_AS(build_nobias_neuron(p, tau, tau, Family::gpt_style, ln), ValidationError);
  CHECK_THROWS_AS(build_gpt_neuron(p, norm), ValidationError);
  CHECK_THROWS_AS(detector_response(tau, p, Family::gpt_style, norm), ValidationError);
}

TEST_CASE("scaling the gain scales every response and keeps the activation set") {
  std::mt19937_64 rng(8);
  const Vector tau = unit_vector(10, rng);
  const DetectorParams p = make_detector_params(tau, 0.1, 50.0);
  for (double s : {0.01, 3.0, 1e3}) {
    const DetectorParams q = make_detector_params(tau, 0.1, 50.0 * s);
    for (int i = 0; i < 100; ++i) {
      const Vector phi = (tau + 0.5 * gaussian_vector(10, rng) / 3.0).normalized();
      const double a = detector_response_on_sphere(phi, p);
      const double b = detector_response_on_sphere(phi, q);
      CHECK(b == doctest::Approx(s * a).epsilon(1e-12));
      CHECK(is_activated(a) == is_activated(b));
    }
  }
}

TEST_CASE("at c = 0 activation is membership in the cap around tau") {
  std::mt19937_64 rng(9);
  const Vector tau = unit_vector(5, rng);
  const DetectorParams p = make_detector_params(tau, 0.3, 50.0);
  for (int i = 0; i < 1000; ++i) {
    const Vector phi = unit_vector(5, rng);
    const double margin = phi.dot(tau) - 0.7;
    if (std::abs(margin) > 1e-12) CHECK(is_activated(detector_response_on_sphere(phi, p)) == (margin >= 0.0));
  }
}

TEST_CASE("neuron json round-trip") {
  std::mt19937_64 rng(10);
  NormWeights norm;
  norm.weight = Vector::Constant(6, 0.5);
  norm.bias = Vector::Constant(6, 0.1);
  ImplantedNeuron n = build_gpt_neuron(make_detector_params(unit_vector(6, rng), 0.005, 50.0), norm);
  n.row_index = 3;
  const ImplantedNeuron back = neuron_from_json(nlohmann::json::parse(to_json(n).dump()));
  CHECK(bitwise_equal(back.weight, n.weight));
  CHECK(*back.bias == *n.bias);
  CHECK(*back.row_index == 3);
  CHECK(back.family == Family::gpt_style);
  CHECK(bitwise_equal(back.params.tau, n.params.tau));
}
