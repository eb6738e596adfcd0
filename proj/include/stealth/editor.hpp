#pragma once

#include "stealth/bias_direction.hpp"
#include "stealth/detector.hpp"
#include "stealth/injection_solver.hpp"
#include "stealth/toy_model.hpp"

#include <json.hpp>

#include <optional>
#include <utility>

namespace stealth {

/// Number of tokens generated when checking whether an edit took.
inline constexpr int kSuccessHorizon = 50;

struct EditRequest {
  Prompt trigger;
  Prompt target;
  int layer = 1;
  double theta = 0.005;
  double delta_gain = 50.0;
  std::optional<Vector> c;

  /// Trigger of at least 2 tokens, non-empty target, valid layer, sequence fits the context.
  void validate(const ToyModel& model) const;
};

struct EditRecord {
  int layer = 1;
  int pruned_row = 0;
  ImplantedNeuron neuron;
  Vector u;
  Vector u0;
  Vector original_row;                 // row k of W1 before the edit
  std::optional<double> original_bias; // b1[k] before the edit (gpt_style)
  std::vector<double> solver_trace;
  int solver_iterations = 0;
  bool solver_ok = true;               // finite objective throughout
  bool unit_normaliser = false;        // |u0| was zero
  bool success = false;                // first token and containment criteria
  Prompt trigger;
  Prompt target;
};

/// Row with the smallest l1 norm, lowest index on ties.
int select_prune_row(const Matrix& w1);

/// Detector neuron for the request at its layer. Bias-free families need a bias direction.
ImplantedNeuron build_edit_neuron(const ToyModel& model, const EditRequest& request,
                                  const std::optional<BiasDirection>& bias_direction);

/// Copy of `model` with row k of W1 (and b1[k]) replaced by the neuron. W2 untouched.
ToyModel implant_detector(const ToyModel& model, int layer, int k, const ImplantedNeuron& neuron);

/// Lambda(u) evaluated by full forward passes of the model with column k of W2 set to u.
/// `model_hat` already holds the detector row; its column k is u0.
double objective_lambda(const Vector& u, const ToyModel& model_hat, int k, const EditRequest& request,
                        const SolverConfig& config);

/// Tail-only objective for column k of W2 in `model_hat`.
InjectionObjective inplace_objective(const ToyModel& model_hat, int k, const EditRequest& request,
                                     const SolverConfig& config);

/// Gradient descent on Lambda starting from u0.
SolveResult solve_output_vector(const ToyModel& model_hat, int k, const EditRequest& request,
                                const SolverConfig& config);

/// Prune the least-l1 row, implant the detector, solve for u, write column k of W2.
std::pair<ToyModel, EditRecord> apply_edit(const ToyModel& model, const EditRequest& request,
                                           const SolverConfig& config,
                                           const std::optional<BiasDirection>& bias_direction = std::nullopt);

/// Restores the saved row, column and bias.
ToyModel revert_edit(const ToyModel& edited, const EditRecord& record);

/// Pruning-only control: row k of W1, column k of W2 and b1[k] set to zero.
ToyModel prune_neuron(const ToyModel& model, int layer, int k);

/// Greedy continuation of `trigger` starts with target[0] and contains `target`.
bool edit_success(const ToyModel& edited, const Prompt& trigger, const Prompt& target,
                  int horizon = kSuccessHorizon);

/// Whether `needle` occurs contiguously in `haystack`.
bool contains(const Prompt& haystack, const Prompt& needle);

nlohmann::json to_json(const EditRecord& record);
EditRecord edit_record_from_json(const nlohmann::json& j);

}  // namespace stealth
