#include "stealth/editor.hpp"

#include "stealth/error.hpp"

#include <algorithm>
#include <cmath>

namespace stealth {

void EditRequest::validate(const ToyModel& model) const {
  model.check_layer(layer);
  require(trigger.size() >= 2, "trigger prompt must have at least 2 tokens");
  require(!target.empty(), "target response must have at least 1 token");
  require(static_cast<int>(trigger.size() + target.size()) - 1 <= model.config.context_window,
          "trigger + target exceed the context window");
  require(theta > 0.0 && delta_gain > 0.0, "theta and delta_gain must be positive");
}

int select_prune_row(const Matrix& w1) {
  require(w1.rows() > 0, "select_prune_row: empty matrix");
  int best = 0;
  double best_norm = w1.row(0).lpNorm<1>();
  for (Eigen::Index i = 1; i < w1.rows(); ++i) {
    const double n = w1.row(i).lpNorm<1>();
    if (n < best_norm) {
      best_norm = n;
      best = static_cast<int>(i);
    }
  }
  return best;
}

ImplantedNeuron build_edit_neuron(const ToyModel& model, const EditRequest& request,
                                  const std::optional<BiasDirection>& bias_direction) {
  const Block& block = model.block(request.layer);
  const Vector phi = feature_map_phi(model, request.layer, request.trigger);
  const DetectorParams params = make_detector_params(phi, request.theta, request.delta_gain, request.c);
  if (has_bias(model.family())) return build_gpt_neuron(params, block.mlp_norm);
  require(bias_direction.has_value(), "bias-free families need a bias direction");
  return build_nobias_neuron(params, bias_direction->v, phi, model.family(), block.mlp_norm);
}

ToyModel implant_detector(const ToyModel& model, int layer, int k, const ImplantedNeuron& neuron) {
  ToyModel out = model;
  Block& b = out.block(layer);
  require(k >= 0 && k < b.w1.rows(), "implant_detector: row out of range");
  b.w1.row(k) = neuron.weight.transpose();
  if (has_bias(model.family())) b.b1(k) = neuron.bias.value_or(0.0);
  return out;
}

double objective_lambda(const Vector& u, const ToyModel& model_hat, int k, const EditRequest& request,
                        const SolverConfig& config) {
  const Vector u0 = model_hat.block(request.layer).w2.col(k);
  const double n2 = u0.squaredNorm();
  const double normaliser = n2 > 0.0 ? n2 : 1.0;
  ToyModel m = model_hat;
  m.block(request.layer).w2.col(k) = u;
  const TeacherForcing tf = teacher_forcing(request.trigger, request.target);
  const RowMatrix logits = forward_logits(m, tf.sequence);
  double loss = config.gamma * u.squaredNorm() / normaliser;
  for (std::size_t i = 0; i < tf.positions.size(); ++i)
    loss -= log_softmax(logits.row(tf.positions[i]).transpose())(tf.tokens[i]);
  return loss;
}

InjectionObjective inplace_objective(const ToyModel& model_hat, int k, const EditRequest& request,
                                     const SolverConfig& config) {
  request.validate(model_hat);
  const TeacherForcing tf = teacher_forcing(request.trigger, request.target);
  ToyModel zeroed = model_hat;
  zeroed.block(request.layer).w2.col(k).setZero();
  LayerProbe probe = probe_layer(zeroed, request.layer, tf.sequence);

  InjectionProblem problem;
  problem.model = &model_hat;
  problem.layer = request.layer;
  problem.length = static_cast<int>(tf.sequence.size());
  problem.base = std::move(probe.block_output);
  problem.gain.resize(problem.length);
  for (int t = 0; t < problem.length; ++t) problem.gain(t) = probe.gate[t](k);
  problem.score_positions = tf.positions;
  problem.score_tokens = tf.tokens;
  problem.u0 = model_hat.block(request.layer).w2.col(k);
  return InjectionObjective(std::move(problem), config.gamma);
}

SolveResult solve_output_vector(const ToyModel& model_hat, int k, const EditRequest& request,
                                const SolverConfig& config) {
  const InjectionObjective objective = inplace_objective(model_hat, k, request, config);
  return minimise(objective, objective.problem().u0, config);
}

std::pair<ToyModel, EditRecord> apply_edit(const ToyModel& model, const EditRequest& request,
                                           const SolverConfig& config,
                                           const std::optional<BiasDirection>& bias_direction) {
  request.validate(model);
  config.validate();
  const Block& original = model.block(request.layer);

  EditRecord rec;
  rec.layer = request.layer;
  rec.trigger = request.trigger;
  rec.target = request.target;
  rec.pruned_row = select_prune_row(original.w1);
  rec.original_row = original.w1.row(rec.pruned_row).transpose();
  if (has_bias(model.family())) rec.original_bias = original.b1(rec.pruned_row);
  rec.u0 = original.w2.col(rec.pruned_row);
  rec.neuron = build_edit_neuron(model, request, bias_direction);
  rec.neuron.row_index = rec.pruned_row;

  ToyModel edited = implant_detector(model, request.layer, rec.pruned_row, rec.neuron);
  const InjectionObjective objective = inplace_objective(edited, rec.pruned_row, request, config);
  const SolveResult solve = minimise(objective, rec.u0, config);
  rec.unit_normaliser = objective.unit_normaliser();
  rec.u = solve.u;
  rec.solver_trace = solve.trace;
  rec.solver_iterations = solve.iterations;
  rec.solver_ok = solve.finite;
  edited.block(request.layer).w2.col(rec.pruned_row) = rec.u;
  rec.success = rec.solver_ok && edit_success(edited, request.trigger, request.target);
  return {std::move(edited), std::move(rec)};
}

ToyModel revert_edit(const ToyModel& edited, const EditRecord& record) {
  ToyModel out = edited;
  Block& b = out.block(record.layer);
  b.w1.row(record.pruned_row) = record.original_row.transpose();
  b.w2.col(record.pruned_row) = record.u0;
  if (record.original_bias) b.b1(record.pruned_row) = *record.original_bias;
  return out;
}

ToyModel prune_neuron(const ToyModel& model, int layer, int k) {
  ToyModel out = model;
  Block& b = out.block(layer);
  require(k >= 0 && k < b.w1.rows(), "prune_neuron: row out of range");
  b.w1.row(k).setZero();
  b.w2.col(k).setZero();
  if (has_bias(model.family())) b.b1(k) = 0.0;
  return out;
}

bool contains(const Prompt& haystack, const Prompt& needle) {
  if (needle.empty()) return true;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

bool edit_success(const ToyModel& edited, const Prompt& trigger, const Prompt& target, int horizon) {
  require(!target.empty(), "edit_success: empty target");
  const int room = edited.config.context_window - static_cast<int>(trigger.size());
  const int n = std::min(horizon, room);
  require(n >= 1, "edit_success: no room to generate");
  const Prompt generated = generate_greedy(edited, trigger, n);
  return generated.front() == target.front() && contains(generated, target);
}

nlohmann::json to_json(const EditRecord& r) {
  return {{"layer_j", r.layer},
          {"pruned_row_k", r.pruned_row},
          {"neuron", to_json(r.neuron)},
          {"u", to_std(r.u)},
          {"u0", to_std(r.u0)},
          {"original_row", to_std(r.original_row)},
          {"original_bias", r.original_bias ? nlohmann::json(*r.original_bias) : nlohmann::json(nullptr)},
          {"solver_trace", r.solver_trace},
          {"solver_iterations", r.solver_iterations},
          {"solver_ok", r.solver_ok},
          {"unit_normaliser", r.unit_normaliser},
          {"success", r.success},
          {"trigger", prompt_id(r.trigger)},
          {"target", prompt_id(r.target)}};
}

EditRecord edit_record_from_json(const nlohmann::json& j) {
  EditRecord r;
  r.layer = j.at("layer_j").get<int>();
  r.pruned_row = j.at("pruned_row_k").get<int>();
  r.neuron = neuron_from_json(j.at("neuron"));
  r.u = from_std(j.at("u").get<std::vector<double>>());
  r.u0 = from_std(j.at("u0").get<std::vector<double>>());
  r.original_row = from_std(j.at("original_row").get<std::vector<double>>());
  if (!j.at("original_bias").is_null()) r.original_bias = j.at("original_bias").get<double>();
  r.solver_trace = j.at("solver_trace").get<std::vector<double>>();
  r.solver_iterations = j.value("solver_iterations", 0);
  r.solver_ok = j.at("solver_ok").get<bool>();
  r.unit_normaliser = j.value("unit_normaliser", false);
  r.success = j.at("success").get<bool>();
  r.trigger = prompt_from_id(j.at("trigger").get<std::string>());
  r.target = prompt_from_id(j.at("target").get<std::string>());
  return r;
}

}  // namespace stealth
