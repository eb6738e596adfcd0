#include "stealth/detector.hpp"

#include "stealth/error.hpp"

#include <cmath>

namespace stealth {

void DetectorParams::validate() const {
  require(tau.size() >= 1, "detector: empty trigger direction");
  require(std::abs(tau.norm() - 1.0) <= 1e-6, "detector: trigger direction must be a unit vector");
  require(theta > 0.0, "detector: theta must be > 0");
  require(delta_gain > 0.0, "detector: delta_gain must be > 0");
  require(c.size() == tau.size(), "detector: centre dimension mismatch");
  require(c.norm() + theta < 1.0, "detector: need |c| + theta < 1");
}

DetectorParams make_detector_params(Vector tau, double theta, double delta_gain, std::optional<Vector> c) {
  DetectorParams p;
  p.c = c ? std::move(*c) : Vector::Zero(tau.size());
  p.tau = std::move(tau);
  p.theta = theta;
  p.delta_gain = delta_gain;
  p.validate();
  return p;
}

double ImplantedNeuron::response(const Vector& zeta) const {
  return weight.dot(zeta) + bias.value_or(0.0);
}

double detector_response_on_sphere(const Vector& phi, const DetectorParams& params) {
  return params.alpha() * ((phi - params.tau).dot(params.tau - params.c) + params.theta);
}

namespace {

void check_family(Family family, const NormWeights& norm) {
  require(has_bias(family) == (norm.bias.size() > 0),
          "detector: normalisation weights do not match family " + to_string(family));
}

}  // namespace

double detector_response(const Vector& zeta, const DetectorParams& params, Family family,
                         const NormWeights& norm) {
  check_family(family, norm);
  require(zeta.size() == params.tau.size(), "detector: dimension mismatch");
  return detector_response_on_sphere(nu_map(family, norm, zeta), params);
}

ImplantedNeuron build_gpt_neuron(const DetectorParams& params, const NormWeights& norm) {
  params.validate();
  require(norm.bias.size() == params.tau.size(), "build_gpt_neuron: needs LayerNorm weights (gpt_style)");
  require((norm.weight.array() != 0.0).all(), "build_gpt_neuron: W_lambda has a zero entry");
  const double a = params.alpha();
  const double scale = a / std::sqrt(static_cast<double>(params.tau.size()));
  ImplantedNeuron n;
  n.family = Family::gpt_style;
  n.params = params;
  n.weight = scale * (params.tau - params.c).cwiseQuotient(norm.weight);
  n.bias = -n.weight.dot(norm.bias) + a * ((params.c - params.tau).dot(params.tau) + params.theta);
  return n;
}

ImplantedNeuron build_nobias_neuron(const DetectorParams& params, const Vector& bias_direction,
                                    const Vector& phi_trig, Family family, const NormWeights& norm) {
  params.validate();
  require(!has_bias(family), "build_nobias_neuron: family has a bias term");
  require(norm.bias.size() == 0, "build_nobias_neuron: needs RMSNorm weights");
  require(bias_direction.size() == params.tau.size() && phi_trig.size() == params.tau.size(),
          "build_nobias_neuron: dimension mismatch");
  require((norm.weight.array() != 0.0).all(), "build_nobias_neuron: W_rho has a zero entry");
  const double trig_proj = phi_trig.dot(bias_direction);
  require(trig_proj > 0.0, "build_nobias_neuron: <phi_trig, v> must be positive");
  const double a = params.alpha();
  const double scale = a / std::sqrt(static_cast<double>(params.tau.size()));
  const double offset = (params.c - params.tau).dot(params.tau) + params.theta;
  ImplantedNeuron n;
  n.family = family;
  n.params = params;
  // tau - c rather than tau, so the response at the trigger is delta_gain for any centre.
  n.weight = scale * ((params.tau - params.c).cwiseQuotient(norm.weight) +
                      (offset / trig_proj) * bias_direction.cwiseQuotient(norm.weight));
  n.bias_direction = bias_direction;
  return n;
}

nlohmann::json to_json(const ImplantedNeuron& n) {
  nlohmann::json j = {{"family", to_string(n.family)},
                      {"theta", n.params.theta},
                      {"delta_gain", n.params.delta_gain},
                      {"c", to_std(n.params.c)},
                      {"tau", to_std(n.params.tau)},
                      {"w", to_std(n.weight)},
                      {"b", n.bias ? nlohmann::json(*n.bias) : nlohmann::json(nullptr)},
                      {"v", n.bias_direction ? nlohmann::json(to_std(*n.bias_direction)) : nlohmann::json(nullptr)}};
  if (n.row_index) j["row_index"] = *n.row_index;
  return j;
}

ImplantedNeuron neuron_from_json(const nlohmann::json& j) {
  ImplantedNeuron n;
  n.family = parse_family(j.at("family").get<std::string>());
  n.params.theta = j.at("theta").get<double>();
  n.params.delta_gain = j.at("delta_gain").get<double>();
  n.params.c = from_std(j.at("c").get<std::vector<double>>());
  n.params.tau = from_std(j.at("tau").get<std::vector<double>>());
  n.weight = from_std(j.at("w").get<std::vector<double>>());
  if (!j.at("b").is_null()) n.bias = j.at("b").get<double>();
  if (!j.at("v").is_null()) n.bias_direction = from_std(j.at("v").get<std::vector<double>>());
  if (j.contains("row_index")) n.row_index = j.at("row_index").get<int>();
  return n;
}

}  // namespace stealth
