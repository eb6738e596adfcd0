// Prints one PASS/FAIL line per acceptance criterion; exits non-zero if any fails.

#include "stealth/bias_direction.hpp"
#include "stealth/detector.hpp"
#include "stealth/editor.hpp"
#include "stealth/evaluation.hpp"
#include "stealth/intrinsic_dimension.hpp"
#include "stealth/jetpack.hpp"
#include "stealth/theory.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

using namespace stealth;
using namespace testing_support;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

FeatureCloud cloud_from_rows(const RowMatrix& x, const std::string& tag) {
  FeatureCloud c;
  c.vectors = x;
  c.unit_norm = true;
  for (Eigen::Index i = 0; i < x.rows(); ++i) c.unit_norm = c.unit_norm && std::abs(x.row(i).norm() - 1.0) < 1e-5;
  c.source_tag = tag;
  return c;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1
Outcome bound_arithmetic() {
  const double v = worst_case_fpr(16.7);
  return {std::abs(v - 0.00217) <= 1e-4, fmt("worst_case_fpr(16.7) = %.5f", v)};
}

// 2
Outcome ball_calibration() {
  std::mt19937_64 rng(2024);
  Outcome o{true, ""};
  for (Eigen::Index d : {4, 8, 16}) {
    const FeatureCloud cloud = cloud_from_rows(ball_points(5000, d, rng), "ball");
    const DimEstimate e = intrinsic_dimension(cloud, 0.0);
    o.pass = o.pass && std::abs(e.n_hat - static_cast<double>(d)) <= 0.5;
    o.detail += "d=" + std::to_string(d) + fmt(" n_hat=%.3f; ", e.n_hat);
  }
  return o;
}

// 3
Outcome cap_geometry() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Eigen::Index dims[] = {4, 16, 64};
  double worst_slack = std::numeric_limits<double>::infinity();
  double worst_pair = 0.0;
  bool ok = true;
  for (int cfg = 0; cfg < 50; ++cfg) {
    const Eigen::Index d = dims[cfg % 3];
    const double theta = 0.001 + 0.499 * u01(rng);
    const Vector tau = unit_vector(d, rng);
    const Vector c = 0.999 * u01(rng) * (1.0 - theta) * unit_vector(d, rng);
    const double delta = delta_edit(theta, tau, c);
    const FeatureCloud xs = sample_cap(tau, theta, c, 100000, 1000 + static_cast<std::uint64_t>(cfg));
    const FeatureCloud ys = sample_cap(tau, theta, c, 100000, 5000 + static_cast<std::uint64_t>(cfg));
    for (Eigen::Index i = 0; i < 100000; ++i) {
      const double s = (xs.vectors.row(i) - ys.vectors.row(i)).dot(ys.vectors.row(i)) - delta;
      worst_slack = std::min(worst_slack, s);
      if (s < -1e-9) ok = false;
    }
    const auto [x, y] = antipodal_cap_pair(tau, theta, c);
    const double gap = std::abs((x - y).dot(y) - delta);
    worst_pair = std::max(worst_pair, gap);
    if (gap > 1e-9) ok = false;
  }
  return {ok, fmt("min pair slack %.3g", worst_slack) + fmt(", antipodal gap %.3g", worst_pair)};
}

// 4
Outcome sphere_bound() {
  std::mt19937_64 rng(4);
  const FeatureCloud cloud = cloud_from_rows(sphere_points(5000, 32, rng), "sphere");
  const double theta = 0.005;
  const BoundResult b = guaranteed_fpr_for_edit(cloud, theta, unit_vector(32, rng), Vector::Zero(32));
  std::uint64_t hits = 0, trials = 0;
  for (int k = 0; k < 200; ++k) {
    const DetectorParams p = make_detector_params(unit_vector(32, rng), theta, 50.0);
    const FprResult r = detector_fpr({p}, cloud);
    hits += static_cast<std::uint64_t>(std::llround(r.per_detector[0] * 5000.0));
    trials += 5000;
  }
  const bool ok = within_binomial_margin(hits, trials, b.fpr_bound) && hits == 0;
  return {ok, std::to_string(hits) + " activations in " + std::to_string(trials) +
                  fmt(", bound %.3g", b.fpr_bound) + fmt(" (rule-of-three fallback %.3g)", b.fallback_bound)};
}

// 5: triggers drawn from caps of varying width around a pole, one fixed prompt feature.
Outcome trigger_distribution_bound() {
  std::mt19937_64 rng(5);
  int compliant = 0;
  std::ostringstream detail;
  for (int cfg = 0; cfg < 20; ++cfg) {
    const Eigen::Index d = cfg % 2 ? 16 : 8;
    const double width = 0.02 + 0.05 * cfg;  // cap half-height, 0.02 .. 0.97
    const double theta = cfg % 4 < 2 ? 0.005 : 0.05;
    const Vector pole = unit_vector(d, rng);
    const FeatureCloud triggers = sample_cap(pole, width, Vector::Zero(d), 2000, 700 + static_cast<std::uint64_t>(cfg));
    // Fixed prompt: one of the triggers in every third configuration.
    const Vector phi_p = cfg % 3 == 0 ? Vector(triggers.vectors.row(0).transpose()) : unit_vector(d, rng);
    const Vector c = Vector::Zero(d);
    std::uint64_t hits = 0;
    for (Eigen::Index i = 1; i < triggers.size(); ++i) {
      const DetectorParams p = make_detector_params(triggers.vectors.row(i).transpose(), theta, 50.0);
      hits += is_activated(detector_response_on_sphere(phi_p, p)) ? 1 : 0;
    }
    const double eps = epsilon_trigger(theta, phi_p, c);
    const BoundResult b = bound_from_estimate(intrinsic_dimension(triggers, eps));
    const std::uint64_t n = static_cast<std::uint64_t>(triggers.size() - 1);
    const bool ok = within_binomial_margin(hits, n, b.fpr_bound);
    compliant += ok ? 1 : 0;
    if (!ok || cfg % 5 == 0)
      detail << "cfg" << cfg << " rate " << static_cast<double>(hits) / static_cast<double>(n) << " bound " << b.fpr_bound
             << "; ";
  }
  detail << compliant << "/20 compliant";
  return {compliant == 20, detail.str()};
}

// 6
Outcome detector_identities() {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> mag(0.1, 1.1);
  const Eigen::Index d = 32;
  NormWeights ln;
  ln.weight.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) ln.weight(i) = (rng() % 2 ? 1.0 : -1.0) * mag(rng);
  ln.bias = 0.1 * gaussian_vector(d, rng);
  double gpt_err = 0.0;
  const DetectorParams p = make_detector_params(unit_vector(d, rng), 0.005, 50.0, Vector(0.2 * unit_vector(d, rng)));
  const ImplantedNeuron g = build_gpt_neuron(p, ln);
  for (int i = 0; i < 1000; ++i) {
    const Vector zeta = layer_norm(gaussian_vector(d, rng), ln.weight, ln.bias);
    const double f = detector_response(zeta, p, Family::gpt_style, ln);
    gpt_err = std::max(gpt_err, std::abs(g.response(zeta) - f) / std::max(1.0, std::abs(f)));
  }

  NormWeights rms;
  rms.weight = ln.weight;
  const Vector x_trig = gaussian_vector(d, rng) + 2.0 * Vector::Ones(d);
  const Vector phi_trig = x_trig.normalized();
  const Vector v = Vector::Ones(d) / std::sqrt(static_cast<double>(d)) + 0.05 * gaussian_vector(d, rng);
  const DetectorParams q = make_detector_params(phi_trig, 0.005, 50.0);
  const ImplantedNeuron nb = build_nobias_neuron(q, v, phi_trig, Family::llama_style, rms);
  const double offset = (q.c - q.tau).dot(q.tau) + q.theta;
  double nobias_err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vector psi = rms_norm(gaussian_vector(d, rng), rms.weight);
    const Vector phi = nu_map(Family::llama_style, rms, psi);
    const double f = detector_response(psi, q, Family::llama_style, rms);
    const double expected = f - q.alpha() * (1.0 - phi.dot(v) / phi_trig.dot(v)) * offset;
    nobias_err = std::max(nobias_err, std::abs(nb.response(psi) - expected) / std::max(1.0, std::abs(f)));
  }
  const double self_sphere = detector_response_on_sphere(p.tau, make_detector_params(p.tau, 0.005, 50.0));
  const double self_nobias = nb.response(rms_norm(x_trig, rms.weight));
  const bool ok = gpt_err <= 1e-9 && nobias_err <= 1e-9 && std::abs(self_sphere - 50.0) <= 1e-9 &&
                  std::abs(self_nobias - 50.0) <= 1e-9;
  return {ok, fmt("gpt identity %.2g", gpt_err) + fmt(", bias-free identity %.2g", nobias_err) +
                  fmt(", trigger response %.12g", self_sphere) + fmt(" / %.12g", self_nobias)};
}

// 7
Outcome bias_direction_oracle() {
  std::mt19937_64 rng(7);
  double worst_rel = 0.0, worst_constraint = 0.0;
  for (int t = 0; t < 10; ++t) {
    const Vector pole = unit_vector(8, rng);
    RowMatrix x(200, 8);
    for (Eigen::Index i = 0; i < 200; ++i) x.row(i) = (pole + 0.4 * gaussian_vector(8, rng)).normalized().transpose();
    const FeatureCloud cloud = cloud_from_rows(x, "clustered");
    const BiasDirection bd = compute_bias_direction(cloud);
    const Vector mu = x.colwise().mean().transpose();
    const RowMatrix centred = x.rowwise() - mu.transpose();
    const Matrix cov = centred.transpose() * centred / 200.0;
    const double lmax = Eigen::SelfAdjointEigenSolver<Matrix>(cov).eigenvalues().maxCoeff();
    const auto project = [&](Vector u) { return Vector(u - (mu.dot(u) - 1.0) / mu.squaredNorm() * mu); };
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < 20; ++r) {
      Vector u = project(gaussian_vector(8, rng));
      for (int it = 0; it < 20000; ++it) u = project(u - (1.0 / lmax) * (cov * u));
      best = std::min(best, u.dot(cov * u));
    }
    const double ours = bias_objective(cloud, bd.v);
    worst_rel = std::max(worst_rel, (ours - best) / best);
    worst_constraint = std::max(worst_constraint, std::abs(mu.dot(bd.v) - 1.0));
  }
  return {worst_rel <= 1e-6 && worst_constraint <= 1e-8,
          fmt("worst relative objective gap %.2g", worst_rel) + fmt(", constraint error %.2g", worst_constraint)};
}

// 8
Outcome jetpack_transparency() {
  ModelConfig mc;
  mc.family = Family::llama_style;
  mc.seed = 8;
  const ToyModel m = init_model(mc);
  const int layer = 2;
  SyntheticCorpusOptions co;
  co.count = 1600;
  co.seed = 8;
  const Corpus corpus = synthetic_corpus(co);
  Corpus train;
  train.prompts.assign(corpus.prompts.begin(), corpus.prompts.begin() + 300);
  const FeatureCloud outputs = extract_block_output_cloud(m, train, layer, PositionMode::random_position, 8);

  std::mt19937_64 rng(8);
  std::vector<EditRequest> requests;
  for (int i = 0; i < 50; ++i) {
    EditRequest r;
    r.trigger = text_prompt(12 + rng() % 12, rng);
    r.target = text_prompt(1, rng);
    r.layer = layer;
    requests.push_back(r);
  }
  JetPackOptions opt;
  opt.exclude_failed = false;
  const JetPackBuild build = build_jetpack(m, layer, requests, outputs, opt);
  if (build.block.size() != 50) return {false, "jet-pack has " + std::to_string(build.block.size()) + " edits"};
  const ToyModel edited = insert_into_model(m, layer, build.block);

  int quiet = 0, skipped = 0, mismatched = 0;
  for (std::size_t i = 300; i < corpus.prompts.size() && quiet < 1000; ++i) {
    const Prompt& full = corpus.prompts[i];
    const Prompt prompt(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(25, full.size())));
    const Prompt window = continuation_window(m, prompt);
    const LayerProbe probe = probe_layer(m, layer, window);
    bool fires = false;
    for (const auto& y : probe.block_output) fires = fires || (jetpack_preactivations(build.block, y).array() > 0.0).any();
    if (fires) {
      ++skipped;
      continue;
    }
    ++quiet;
    const bool same = bitwise_equal(forward_logits(edited, window), forward_logits(m, window)) &&
                      perplexity_ratio(m, edited, prompt) == 1.0;
    mismatched += same ? 0 : 1;
  }

  EditRequest extra;
  extra.trigger = prompt_from_text("an extra trigger prompt");
  extra.target = prompt_from_text("q");
  extra.layer = layer;
  const AddedEdit added = add_edit(build.block, extra, m, layer, SolverConfig{});
  const bool restored = bitwise_equal(remove_edit(added.block, added.result.id), build.block);

  std::ostringstream s;
  s << quiet << " quiet prompts (" << skipped << " activating skipped), " << mismatched << " mismatches, add/remove "
    << (restored ? "bitwise" : "differs");
  return {quiet == 1000 && mismatched == 0 && restored, s.str()};
}

// Confirms every difference between two models lies in row k of W1 / column k of W2 (and b1[k]).
bool confined_to_row_and_column(const ToyModel& original, const ToyModel& edited, int layer, int k) {
  ToyModel patched = edited;
  Block& b = patched.block(layer);
  const Block& o = original.block(layer);
  b.w1.row(k) = o.w1.row(k);
  b.w2.col(k) = o.w2.col(k);
  if (b.b1.size() > 0) b.b1(k) = o.b1(k);
  return bitwise_equal(patched, original);
}

// 9
Outcome edit_mechanics() {
  ModelConfig mc;
  mc.family = Family::llama_style;
  mc.d = 32;
  mc.n_layers = 4;
  mc.seed = 9;
  const ToyModel m = init_model(mc);
  const int layer = 2;
  std::mt19937_64 rng(9);
  std::vector<Vector> feats;
  for (int i = 0; i < 500; ++i) feats.push_back(feature_map_phi(m, layer, text_prompt(2 + rng() % 40, rng)));
  const BiasDirection bd = compute_bias_direction(make_cloud(feats, "general"));
  int monotone = 0, success = 0, local = 0;
  for (int i = 0; i < 20; ++i) {
    EditRequest r;
    r.trigger = text_prompt(10 + rng() % 20, rng);
    r.target = text_prompt(1, rng);
    const Prompt greedy = generate_greedy(m, r.trigger, 1);
    if (greedy.front() == r.target.front()) r.target.front() = r.target.front() == 'a' ? 'b' : 'a';
    r.layer = layer;
    const auto [edited, rec] = apply_edit(m, r, SolverConfig{}, bd);
    monotone += std::is_sorted(rec.solver_trace.rbegin(), rec.solver_trace.rend()) ? 1 : 0;
    success += rec.success ? 1 : 0;
    local += confined_to_row_and_column(m, edited, layer, rec.pruned_row) ? 1 : 0;
  }
  std::ostringstream s;
  s << "monotone " << monotone << "/20, success " << success << "/20, local " << local << "/20";
  return {monotone == 20 && success >= 16 && local == 20, s.str()};
}

// 10
Outcome pruning_control() {
  SyntheticCorpusOptions co;
  co.count = 60;
  co.seed = 5;
  const Corpus corpus = synthetic_corpus(co);
  double pooled = 0.0;
  int pooled_n = 0;
  std::ostringstream s;
  for (Family f : kFamilies) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      ModelConfig mc;
      mc.family = f;
      mc.seed = seed;
      const ToyModel m = init_model(mc);
      double model_sum = 0.0;
      int model_n = 0;
      for (int layer = 1; layer <= mc.n_layers; ++layer) {
        const ToyModel pruned = prune_neuron(m, layer, select_prune_row(m.block(layer).w1));
        for (const Prompt& p : corpus.prompts) {
          const Prompt q(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(25, p.size())));
          model_sum += perplexity_ratio(m, pruned, q);
          ++model_n;
        }
      }
      s << to_string(f) << "/" << seed << "=" << fmt("%.3f", model_sum / model_n) << " ";
      pooled += model_sum;
      pooled_n += model_n;
    }
  }
  const double mean = pooled / pooled_n;
  s << fmt("| pooled mean %.4f", mean) << " over " << pooled_n << " windows";
  return {mean >= 0.95 && mean <= 1.05, s.str()};
}

// 11
Outcome gradient_oracle() {
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int model = 0; model < 5; ++model) {
    const Family f = kFamilies[model % 3];
    const ToyModel m = small_model(f, 100 + static_cast<std::uint64_t>(model), 16, 48, 3, 64);
    const int layer = 1 + model % 3;
    EditRequest r;
    r.trigger = text_prompt(8 + model, rng);
    r.target = text_prompt(1 + model % 3, rng);
    r.layer = layer;
    std::optional<BiasDirection> bd;
    if (!has_bias(f)) {
      std::vector<Vector> feats;
      for (int i = 0; i < 200; ++i) feats.push_back(feature_map_phi(m, layer, text_prompt(2 + rng() % 30, rng)));
      bd = compute_bias_direction(make_cloud(feats, "general"));
    }
    const int k = select_prune_row(m.block(layer).w1);
    const ToyModel hat = implant_detector(m, layer, k, build_edit_neuron(m, r, bd));
    const InjectionObjective obj = inplace_objective(hat, k, r, SolverConfig{});
    const Vector u = hat.block(layer).w2.col(k) + 0.3 * gaussian_vector(16, rng);
    Vector grad;
    obj.value_and_gradient(u, grad);
    for (int dir = 0; dir < 10; ++dir) {
      const Vector e = unit_vector(16, rng);
      const double h = 1e-5;
      const double fd = (obj.value(u + h * e) - obj.value(u - h * e)) / (2 * h);
      const double an = grad.dot(e);
      // Relative to the directional derivative, floored at 1e-3 |grad| for near-orthogonal directions.
      worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(an), 1e-3 * grad.norm()));
    }
  }
  return {worst <= 1e-4, fmt("worst relative error %.2g", worst)};
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select criteria by number.
  std::vector<std::size_t> only;
  for (int a = 1; a < argc; ++a) only.push_back(std::stoul(argv[a]));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"bound arithmetic", bound_arithmetic},
      {"intrinsic-dimension calibration", ball_calibration},
      {"cap geometry", cap_geometry},
      {"fixed-trigger false-positive bound", sphere_bound},
      {"random-trigger false-positive bound", trigger_distribution_bound},
      {"detector identities", detector_identities},
      {"bias-direction oracle", bias_direction_oracle},
      {"jet-pack transparency", jetpack_transparency},
      {"edit mechanics", edit_mechanics},
      {"pruning control", pruning_control},
      {"gradient oracle", gradient_oracle},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && std::find(only.begin(), only.end(), i + 1) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail
              << fmt(" [%.1fs]", secs) << std::endl;
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
