#pragma once

#include "stealth/toy_model.hpp"

#include <json.hpp>

#include <optional>

namespace stealth {

/// Linear trigger detector f(zeta) = alpha (<nu(zeta) - tau, tau - c> + theta), alpha = delta_gain/theta.
struct DetectorParams {
  Vector tau;               // unit trigger direction
  double theta = 0.005;     // > 0
  double delta_gain = 50.0; // response at the trigger
  Vector c;                 // centre point, |c| + theta < 1

  double alpha() const { return delta_gain / theta; }
  /// Throws ValidationError when an invariant fails.
  void validate() const;
};

/// c defaults to the origin.
DetectorParams make_detector_params(Vector tau, double theta, double delta_gain,
                                    std::optional<Vector> c = std::nullopt);

/// Concrete weight row (and bias, for gpt_style) realising a detector in W1.
struct ImplantedNeuron {
  Family family = Family::llama_style;
  DetectorParams params;
  Vector weight;
  std::optional<double> bias;            // gpt_style only
  std::optional<Vector> bias_direction;  // llama/mamba only
  std::optional<int> row_index;

  /// <w, zeta> + b.
  double response(const Vector& zeta) const;
};

/// f evaluated on a block input zeta (an output of eta for `family`).
double detector_response(const Vector& zeta, const DetectorParams& params, Family family,
                         const NormWeights& norm);

/// The same quantity from a point already on the sphere: <phi - tau, tau - c> + theta, times alpha.
double detector_response_on_sphere(const Vector& phi, const DetectorParams& params);

/// A detector is active when f >= 0.
inline bool is_activated(double response) { return response >= 0.0; }

/// w = (alpha/sqrt(d)) (tau - c) ./ W_lambda,  b = -<w, b_lambda> + alpha(<c - tau, tau> + theta).
ImplantedNeuron build_gpt_neuron(const DetectorParams& params, const NormWeights& norm);

/// w = (alpha/sqrt(d)) [(tau - c) ./ W_rho + (<c - tau, tau> + theta) (v ./ W_rho)/<phi_trig, v>].
/// <w, psi(p)> = f(psi(p)) - alpha (1 - <phi(p), v>/<phi_trig, v>)(<c - tau, tau> + theta).
ImplantedNeuron build_nobias_neuron(const DetectorParams& params, const Vector& bias_direction,
                                    const Vector& phi_trig, Family family, const NormWeights& norm);

nlohmann::json to_json(const ImplantedNeuron& neuron);
ImplantedNeuron neuron_from_json(const nlohmann::json& j);

}  // namespace stealth
