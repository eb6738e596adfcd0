#include "stealth/jetpack.hpp"

#include "stealth/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace stealth {

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

ToyModel without_jetpacks_from(const ToyModel& model, int layer) {
  ToyModel out = model;
  for (auto it = out.jetpacks.begin(); it != out.jetpacks.end();) {
    if (it->first >= layer) {
      it = out.jetpacks.erase(it);
    } else {
      ++it;
    }
  }
  return out;
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

}  // namespace

bool bitwise_equal(const JetPackBlock& a, const JetPackBlock& b) {
  return bitwise_equal(a.mu, b.mu) && bitwise_equal(a.w1, b.w1) && bitwise_equal(a.b, b.b) &&
         bitwise_equal(a.w2, b.w2) && same_bits(a.theta, b.theta) && same_bits(a.delta_gain, b.delta_gain) &&
         a.edit_ids == b.edit_ids;
}

JetPackBlock empty_jetpack(const Vector& mu, double theta, double delta_gain) {
  require(mu.size() >= 1, "jet-pack centroid must be non-empty");
  require(theta > 0.0 && theta < 1.0, "jet-pack theta must lie in (0, 1)");
  require(delta_gain > 0.0, "jet-pack delta_gain must be positive");
  JetPackBlock b;
  b.mu = mu;
  b.w1 = Matrix::Zero(0, mu.size());
  b.b = Vector::Zero(0);
  b.w2 = Matrix::Zero(mu.size(), 0);
  b.theta = theta;
  b.delta_gain = delta_gain;
  return b;
}

Vector jet_normalise(const Vector& x, const Vector& mu) {
  require(x.size() == mu.size(), "jet_normalise: dimension mismatch");
  const Vector diff = x - mu;
  const double n = diff.norm();
  require(n > 0.0, "jet_normalise: x equals the centroid");
  return diff / n;
}

Vector jetpack_preactivations(const JetPackBlock& block, const Vector& x) {
  return block.w1 * jet_normalise(x, block.mu) + block.b;
}

Vector jetpack_forward(const JetPackBlock& block, const Vector& x) {
  if (block.size() == 0) return x;
  const Vector pre = jetpack_preactivations(block, x);
  if (!(pre.array() > 0.0).any()) return x;
  return x + block.w2 * pre.unaryExpr([](double v) { return relu(v); });
}

Vector compute_centroid(const FeatureCloud& cloud) {
  require(cloud.size() >= 1, "compute_centroid: empty cloud");
  return cloud.vectors.colwise().mean().transpose();
}

Vector block_output_feature(const ToyModel& model, int layer, const Prompt& prompt) {
  require(!prompt.empty(), "block_output_feature: empty prompt");
  return probe_layer(model, layer, prompt).block_output.back();
}

std::vector<std::string> JetPackBuild::excluded() const {
  std::vector<std::string> out;
  for (const auto& e : edits)
    if (!e.included) out.push_back(e.id);
  return out;
}

AddedEdit add_edit(const JetPackBlock& block, const EditRequest& request, const ToyModel& model, int layer,
                   const SolverConfig& solver) {
  model.check_layer(layer);
  EditRequest req = request;
  req.layer = layer;
  req.validate(model);
  require(block.dim() == model.d(), "add_edit: jet-pack dimension differs from the model");
  const std::string id = prompt_id(req.trigger);
  require(std::find(block.edit_ids.begin(), block.edit_ids.end(), id) == block.edit_ids.end(),
          "add_edit: duplicate trigger '" + id + "'");

  const ToyModel base_model = without_jetpacks_from(model, layer);
  const double alpha = block.delta_gain / block.theta;
  const Vector psi = jet_normalise(block_output_feature(base_model, layer, req.trigger), block.mu);
  const Vector row = alpha * psi;
  const double bias = alpha * (block.theta - psi.squaredNorm());

  const TeacherForcing tf = teacher_forcing(req.trigger, req.target);
  LayerProbe probe = probe_layer(base_model, layer, tf.sequence);
  InjectionProblem problem;
  problem.model = &base_model;
  problem.layer = layer;
  problem.length = static_cast<int>(tf.sequence.size());
  problem.gain.resize(problem.length);
  for (int t = 0; t < problem.length; ++t)
    problem.gain(t) = relu(row.dot(jet_normalise(probe.block_output[t], block.mu)) + bias);
  problem.base = std::move(probe.block_output);
  problem.score_positions = tf.positions;
  problem.score_tokens = tf.tokens;
  problem.u0 = Vector::Zero(model.d());
  const InjectionObjective objective(std::move(problem), solver.gamma);
  const SolveResult solve = minimise(objective, objective.problem().u0, solver);

  AddedEdit out;
  JetPackBlock& nb = out.block;
  const Eigen::Index e = block.size();
  const Eigen::Index d = block.dim();
  nb.mu = block.mu;
  nb.theta = block.theta;
  nb.delta_gain = block.delta_gain;
  nb.w1.resize(e + 1, d);
  nb.w1.topRows(e) = block.w1;
  nb.w1.row(e) = row.transpose();
  nb.b.resize(e + 1);
  nb.b.head(e) = block.b;
  nb.b(e) = bias;
  nb.w2.resize(d, e + 1);
  nb.w2.leftCols(e) = block.w2;
  nb.w2.col(e) = solve.u;
  nb.edit_ids = block.edit_ids;
  nb.edit_ids.push_back(id);

  JetPackEditResult& r = out.result;
  r.id = id;
  r.trigger = req.trigger;
  r.target = req.target;
  r.included = true;
  r.solver_ok = solve.finite;
  r.solver_iterations = solve.iterations;
  r.monotone = std::is_sorted(solve.trace.rbegin(), solve.trace.rend());
  r.initial_loss = solve.trace.front();
  r.final_loss = solve.trace.back();
  if (solve.finite) {
    JetPackBlock single = empty_jetpack(block.mu, block.theta, block.delta_gain);
    single.w1 = nb.w1.bottomRows(1);
    single.b = nb.b.tail(1);
    single.w2 = nb.w2.rightCols(1);
    single.edit_ids = {id};
    r.success = edit_success(insert_into_model(base_model, layer, single), req.trigger, req.target);
  }
  return out;
}

JetPackBlock remove_edit(const JetPackBlock& block, const std::string& id) {
  const auto it = std::find(block.edit_ids.begin(), block.edit_ids.end(), id);
  require(it != block.edit_ids.end(), "remove_edit: unknown edit id '" + id + "'");
  const Eigen::Index k = it - block.edit_ids.begin();
  const Eigen::Index e = block.size();
  JetPackBlock out = empty_jetpack(block.mu, block.theta, block.delta_gain);
  out.w1.resize(e - 1, block.dim());
  out.b.resize(e - 1);
  out.w2.resize(block.dim(), e - 1);
  Eigen::Index dst = 0;
  for (Eigen::Index i = 0; i < e; ++i) {
    if (i == k) continue;
    out.w1.row(dst) = block.w1.row(i);
    out.b(dst) = block.b(i);
    out.w2.col(dst) = block.w2.col(i);
    out.edit_ids.push_back(block.edit_ids[static_cast<std::size_t>(i)]);
    ++dst;
  }
  return out;
}

JetPackBuild build_jetpack(const ToyModel& model, int layer, const std::vector<EditRequest>& requests,
                           const Vector& mu, const JetPackOptions& options) {
  model.check_layer(layer);
  require(!requests.empty(), "build_jetpack: no edit requests");
  std::vector<std::string> ids;
  for (const auto& r : requests) {
    const std::string id = prompt_id(r.trigger);
    require(std::find(ids.begin(), ids.end(), id) == ids.end(), "build_jetpack: duplicate trigger '" + id + "'");
    ids.push_back(id);
  }
  JetPackBuild out;
  out.block = empty_jetpack(mu, options.theta, options.delta_gain);
  for (const auto& request : requests) {
    AddedEdit added = add_edit(out.block, request, model, layer, options.solver);
    const bool keep = !options.exclude_failed || (added.result.solver_ok && added.result.success);
    added.result.included = keep;
    if (keep) out.block = std::move(added.block);
    out.edits.push_back(std::move(added.result));
  }
  return out;
}

JetPackBuild build_jetpack(const ToyModel& model, int layer, const std::vector<EditRequest>& requests,
                           const FeatureCloud& general_cloud, const JetPackOptions& options) {
  return build_jetpack(model, layer, requests, compute_centroid(general_cloud), options);
}

bool CrossTalkReport::consistent() const {
  if (gram_flags.size() != direct_flags.size()) return false;
  for (std::size_t n = 0; n < gram_flags.size(); ++n)
    if (gram_flags[n].i != direct_flags[n].i || gram_flags[n].j != direct_flags[n].j) return false;
  return true;
}

CrossTalkReport cross_talk_check(const JetPackBlock& block) {
  CrossTalkReport report;
  const double alpha = block.delta_gain / block.theta;
  report.raw_threshold = alpha * alpha * (1.0 - block.theta);
  const Matrix gram = block.w1 * block.w1.transpose();
  const Matrix psi = block.w1 / alpha;
  for (int i = 0; i < block.size(); ++i) {
    for (int j = 0; j < block.size(); ++j) {
      if (i == j) continue;
      CrossTalkPair p;
      p.i = i;
      p.j = j;
      p.gram_raw = gram(i, j);
      p.gram_normalised = psi.row(i).dot(psi.row(j));
      // Feed the detector a point whose normalised feature is trigger j.
      const Vector at_trigger = block.mu + psi.row(j).transpose();
      p.response = block.w1.row(i).dot(jet_normalise(at_trigger, block.mu)) + block.b(i);
      if (p.gram_raw > block.theta) ++report.raw_entries_above_theta;
      if (p.gram_normalised >= 1.0 - block.theta) report.gram_flags.push_back(p);
      if (is_activated(p.response)) report.direct_flags.push_back(p);
    }
  }
  return report;
}

ToyModel insert_into_model(const ToyModel& model, int layer, const JetPackBlock& block) {
  model.check_layer(layer);
  require(block.dim() == model.d(), "insert_into_model: jet-pack dimension differs from the model");
  require(block.w1.cols() == block.dim() && block.w2.rows() == block.dim() && block.w2.cols() == block.size() &&
              block.b.size() == block.size() && static_cast<int>(block.edit_ids.size()) == block.size(),
          "insert_into_model: inconsistent jet-pack shapes");
  ToyModel out = model;
  out.jetpacks[layer] = block;
  return out;
}

nlohmann::json to_json(const JetPackEditResult& r) {
  return {{"id", r.id},
          {"target", prompt_id(r.target)},
          {"included", r.included},
          {"success", r.success},
          {"solver_ok", r.solver_ok},
          {"solver_iterations", r.solver_iterations},
          {"monotone", r.monotone},
          {"initial_loss", r.initial_loss},
          {"final_loss", r.final_loss}};
}

nlohmann::json to_json(const CrossTalkReport& r) {
  auto pairs = [](const std::vector<CrossTalkPair>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& p : v)
      a.push_back({{"i", p.i}, {"j", p.j}, {"gram_raw", p.gram_raw}, {"gram_normalised", p.gram_normalised},
                   {"response", p.response}});
    return a;
  };
  return {{"gram_matrix", pairs(r.gram_flags)},
          {"direct_eval", pairs(r.direct_flags)},
          {"raw_threshold", r.raw_threshold},
          {"raw_entries_above_theta", r.raw_entries_above_theta},
          {"consistent", r.consistent()}};
}

}  // namespace stealth
