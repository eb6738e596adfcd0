#include "stealth/evaluation.hpp"

#include "stealth/bias_direction.hpp"
#include "stealth/editor.hpp"
#include "stealth/error.hpp"
#include "stealth/kernels.hpp"
#include "stealth/model_io.hpp"
#include "stealth/report.hpp"
#include "stealth/theory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numeric>
#include <random>

namespace stealth {

namespace {

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

Prompt truncate(const Prompt& p, int n) {
  return Prompt(p.begin(), p.begin() + std::min<std::ptrdiff_t>(n, static_cast<std::ptrdiff_t>(p.size())));
}

bool monotone(const std::vector<double>& trace) {
  for (std::size_t i = 1; i < trace.size(); ++i)
    if (trace[i] > trace[i - 1]) return false;
  return true;
}

}  // namespace

void Corpus::validate() const {
  require(!prompts.empty(), "corpus is empty");
  for (const auto& p : prompts) require(!p.empty(), "corpus contains an empty prompt");
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot open corpus " + path.string());
  Corpus c;
  c.source = path.string();
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) c.prompts.push_back(prompt_from_text(line));
  }
  c.validate();
  return c;
}

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError("cannot write corpus " + path.string());
  for (const auto& p : corpus.prompts) out << prompt_to_text(p) << '\n';
}

Corpus synthetic_corpus(const SyntheticCorpusOptions& o) {
  require(o.count >= 1 && o.vocabulary >= 1, "synthetic corpus: count and vocabulary must be positive");
  require(o.min_words >= 1 && o.max_words >= o.min_words, "synthetic corpus: bad word range");
  require(o.repetition >= 0.0 && o.repetition < 1.0, "synthetic corpus: repetition must lie in [0, 1)");
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<int> word_len(2, 8);
  std::uniform_int_distribution<int> letter(0, 25);
  std::vector<std::string> words;
  for (int i = 0; i < o.vocabulary; ++i) {
    std::string w;
    const int n = word_len(rng);
    for (int k = 0; k < n; ++k) w.push_back(static_cast<char>('a' + letter(rng)));
    words.push_back(w);
  }
  std::vector<double> weights(static_cast<std::size_t>(o.vocabulary));
  for (int i = 0; i < o.vocabulary; ++i) weights[static_cast<std::size_t>(i)] = 1.0 / (i + 1.0);
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  std::uniform_int_distribution<int> n_words(o.min_words, o.max_words);
  std::bernoulli_distribution repeat(o.repetition);

  Corpus c;
  c.source = "synthetic:" + std::to_string(o.seed);
  for (int i = 0; i < o.count; ++i) {
    std::string s;
    int prev = -1;
    const int n = n_words(rng);
    for (int k = 0; k < n; ++k) {
      const int w = (prev >= 0 && repeat(rng)) ? prev : pick(rng);
      std::string word = words[static_cast<std::size_t>(w)];
      if (k == 0) word[0] = static_cast<char>(word[0] - 'a' + 'A');
      if (k > 0) s.push_back(' ');
      s += word;
      prev = w;
    }
    s.push_back('.');
    c.prompts.push_back(prompt_from_text(s));
  }
  return c;
}

int sample_length(const Prompt& prompt, PositionMode mode, std::uint64_t seed, std::size_t index) {
  const int len = static_cast<int>(prompt.size());
  if (mode == PositionMode::last_token) {
    require(len >= 1, "sample_length: empty prompt");
    return len;
  }
  require(len >= 2, "random_position mode needs prompts of at least 2 tokens");
  auto rng = seeded(seed, index, 0x5eed);
  std::uniform_int_distribution<int> pick(2, std::min(kMaxSampleLength, len));
  return pick(rng);
}

LayerFeatures extract_layer_features(const ToyModel& model, const Corpus& corpus, int layer, PositionMode mode,
                                     std::uint64_t seed) {
  corpus.validate();
  model.check_layer(layer);
  const Family family = model.family();
  const NormWeights& norm = model.block(layer).mlp_norm;
  const std::size_t n = corpus.prompts.size();
  LayerFeatures f;
  f.phi.vectors.resize(static_cast<Eigen::Index>(n), model.d());
  f.psi.vectors.resize(static_cast<Eigen::Index>(n), model.d());
  f.block_output.vectors.resize(static_cast<Eigen::Index>(n), model.d());
  for (std::size_t i = 0; i < n; ++i) {
    const int len = std::min(sample_length(corpus.prompts[i], mode, seed, i), model.config.context_window);
    f.lengths.push_back(len);
    const LayerProbe probe = probe_layer(model, layer, truncate(corpus.prompts[i], len));
    const auto row = static_cast<Eigen::Index>(i);
    f.psi.vectors.row(row) = probe.psi.back().transpose();
    f.phi.vectors.row(row) = nu_map(family, norm, probe.psi.back()).transpose();
    f.block_output.vectors.row(row) = probe.block_output.back().transpose();
  }
  f.phi.unit_norm = true;
  f.phi.source_tag = "phi:layer" + std::to_string(layer);
  f.psi.source_tag = "psi:layer" + std::to_string(layer);
  f.block_output.source_tag = "block_output:layer" + std::to_string(layer);
  return f;
}

FeatureCloud extract_feature_cloud(const ToyModel& model, const Corpus& corpus, int layer, PositionMode mode,
                                   std::uint64_t seed) {
  return extract_layer_features(model, corpus, layer, mode, seed).phi;
}

FeatureCloud extract_input_cloud(const ToyModel& model, const Corpus& corpus, int layer, PositionMode mode,
                                 std::uint64_t seed) {
  return extract_layer_features(model, corpus, layer, mode, seed).psi;
}

FeatureCloud extract_block_output_cloud(const ToyModel& model, const Corpus& corpus, int layer, PositionMode mode,
                                        std::uint64_t seed) {
  return extract_layer_features(model, corpus, layer, mode, seed).block_output;
}

double perplexity(const ToyModel& model, const Prompt& tokens) {
  require(tokens.size() >= 2, "perplexity needs at least 2 tokens");
  const RowMatrix logits = forward_logits(model, tokens);
  double nll = 0.0;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const Vector logp = log_softmax(logits.row(static_cast<Eigen::Index>(i - 1)).transpose());
    nll -= logp(tokens[i]);
  }
  return std::exp(nll / static_cast<double>(tokens.size() - 1));
}

Prompt continuation_window(const ToyModel& model, const Prompt& prompt, int horizon) {
  require(!prompt.empty(), "continuation_window: empty prompt");
  require(static_cast<int>(prompt.size()) < horizon, "continuation_window: prompt must be shorter than the horizon");
  require(horizon <= model.config.context_window, "continuation_window: horizon exceeds the context window");
  return concat(prompt, generate_greedy(model, prompt, horizon - static_cast<int>(prompt.size())));
}

double perplexity_ratio(const ToyModel& original, const ToyModel& edited, const Prompt& prompt, int horizon) {
  const Prompt window = continuation_window(original, prompt, horizon);
  return perplexity(edited, window) / perplexity(original, window);
}

FprResult detector_fpr(const std::vector<DetectorParams>& detectors, const FeatureCloud& cloud,
                       const std::vector<std::vector<Eigen::Index>>& excluded) {
  require(excluded.empty() || excluded.size() == detectors.size(), "detector_fpr: exclusion list size mismatch");
  FprResult r;
  r.evaluated = static_cast<std::size_t>(cloud.size());
  if (detectors.empty() || cloud.size() == 0) {
    r.per_detector.assign(detectors.size(), 0.0);
    return r;
  }
  std::vector<std::uint8_t> any(static_cast<std::size_t>(cloud.size()), 0);
  for (std::size_t i = 0; i < detectors.size(); ++i) {
    const DetectorParams& p = detectors[i];
    require(p.tau.size() == cloud.dim(), "detector_fpr: dimension mismatch");
    const Vector c = p.c.size() == 0 ? Vector::Zero(p.tau.size()) : p.c;
    std::vector<std::uint8_t> hits = kernels::parallel::cap_hits(cloud.vectors, p.tau, c, p.theta);
    std::size_t n = hits.size();
    if (!excluded.empty()) {
      for (Eigen::Index row : excluded[i]) {
        require(row >= 0 && row < cloud.size(), "detector_fpr: excluded row out of range");
        if (hits[static_cast<std::size_t>(row)] != 2) {
          hits[static_cast<std::size_t>(row)] = 2;
          --n;
        }
      }
    }
    std::size_t count = 0;
    for (std::size_t k = 0; k < hits.size(); ++k) {
      if (hits[k] == 1) {
        ++count;
        any[k] = 1;
      }
    }
    r.per_detector.push_back(n > 0 ? static_cast<double>(count) / static_cast<double>(n) : 0.0);
  }
  r.any = static_cast<double>(std::accumulate(any.begin(), any.end(), std::size_t{0})) /
          static_cast<double>(any.size());
  return r;
}

FprResult neuron_fpr(const std::vector<ImplantedNeuron>& neurons, const FeatureCloud& psi_cloud) {
  FprResult r;
  r.evaluated = static_cast<std::size_t>(psi_cloud.size());
  std::vector<std::uint8_t> any(r.evaluated, 0);
  for (const auto& neuron : neurons) {
    std::size_t count = 0;
    for (Eigen::Index k = 0; k < psi_cloud.size(); ++k) {
      if (is_activated(neuron.response(psi_cloud.vectors.row(k).transpose()))) {
        ++count;
        any[static_cast<std::size_t>(k)] = 1;
      }
    }
    r.per_detector.push_back(r.evaluated ? static_cast<double>(count) / static_cast<double>(r.evaluated) : 0.0);
  }
  if (r.evaluated)
    r.any = static_cast<double>(std::accumulate(any.begin(), any.end(), std::size_t{0})) /
            static_cast<double>(r.evaluated);
  return r;
}

FprResult jetpack_fpr(const JetPackBlock& block, const FeatureCloud& block_outputs) {
  FprResult r;
  r.evaluated = static_cast<std::size_t>(block_outputs.size());
  std::vector<std::size_t> counts(static_cast<std::size_t>(block.size()), 0);
  std::size_t any = 0;
  for (Eigen::Index k = 0; k < block_outputs.size(); ++k) {
    if (block.size() == 0) break;
    const Vector pre = jetpack_preactivations(block, block_outputs.vectors.row(k).transpose());
    bool fired = false;
    for (int i = 0; i < block.size(); ++i) {
      if (is_activated(pre(i))) {
        ++counts[static_cast<std::size_t>(i)];
        fired = true;
      }
    }
    if (fired) ++any;
  }
  for (std::size_t c : counts)
    r.per_detector.push_back(r.evaluated ? static_cast<double>(c) / static_cast<double>(r.evaluated) : 0.0);
  if (r.evaluated) r.any = static_cast<double>(any) / static_cast<double>(r.evaluated);
  return r;
}

std::string to_string(PipelineKind kind) {
  switch (kind) {
    case PipelineKind::in_place: return "in_place";
    case PipelineKind::jetpack: return "jetpack";
    case PipelineKind::attack_corrupt: return "attack_corrupt";
    case PipelineKind::attack_context: return "attack_context";
  }
  return "?";
}

PipelineKind parse_pipeline_kind(std::string_view name) {
  if (name == "in_place") return PipelineKind::in_place;
  if (name == "jetpack") return PipelineKind::jetpack;
  if (name == "attack_corrupt") return PipelineKind::attack_corrupt;
  if (name == "attack_context") return PipelineKind::attack_context;
  throw ValidationError("unknown pipeline kind '" + std::string(name) + "'");
}

void PipelineConfig::validate() const {
  if (!model_path) {
    model.validate();
    for (int l : layers) require(l >= 1 && l <= model.n_layers, "pipeline: layer out of range");
  }
  require(n_edits >= 1, "pipeline: n_edits must be >= 1");
  require(target_length >= 1, "pipeline: target_length must be >= 1");
  require(train_size >= 2 && test_size >= 2, "pipeline: train_size and test_size must be >= 2");
  require(perplexity_prompts >= 0, "pipeline: perplexity_prompts must be >= 0");
  require(horizon >= 3, "pipeline: horizon must be >= 3");
  require(max_trigger_length >= 2, "pipeline: max_trigger_length must be >= 2");
  require(theta > 0.0 && theta < 1.0 && delta_gain > 0.0, "pipeline: bad detector parameters");
  require(corruption_rate > 0.0 && corruption_rate < 1.0, "pipeline: corruption_rate must lie in (0, 1)");
  require(context_mode != AttackMode::corrupted_prompt, "pipeline: context_mode must be a context attack");
  require(thm3_samples >= 1 && thm3_budget >= 1, "pipeline: thm3 sample counts must be positive");
  solver.validate();
}

nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json j = {{"kind", to_string(c.kind)},
                      {"layers", c.layers},
                      {"n_edits", c.n_edits},
                      {"target_length", c.target_length},
                      {"train_size", c.train_size},
                      {"test_size", c.test_size},
                      {"perplexity_prompts", c.perplexity_prompts},
                      {"horizon", c.horizon},
                      {"max_trigger_length", c.max_trigger_length},
                      {"theta", c.theta},
                      {"delta_gain", c.delta_gain},
                      {"gamma", c.solver.gamma},
                      {"step_size", c.solver.step_size},
                      {"max_iters", c.solver.max_iters},
                      {"norm_cap", c.solver.norm_cap ? nlohmann::json(*c.solver.norm_cap) : nlohmann::json(nullptr)},
                      {"no_cap", c.solver.no_cap},
                      {"corruption_rate", c.corruption_rate},
                      {"context_mode", to_string(c.context_mode)},
                      {"thm3_samples", c.thm3_samples},
                      {"thm3_budget", c.thm3_budget},
                      {"seed", c.seed},
                      {"model", config_to_json(c.model)}};
  j["model_path"] = c.model_path ? nlohmann::json(c.model_path->string()) : nlohmann::json(nullptr);
  j["corpus_path"] = c.corpus_path ? nlohmann::json(c.corpus_path->string()) : nlohmann::json(nullptr);
  return j;
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  if (j.contains("kind")) c.kind = parse_pipeline_kind(j.at("kind").get<std::string>());
  if (j.contains("model")) c.model = config_from_json(j.at("model"));
  if (j.contains("model_path") && !j.at("model_path").is_null()) c.model_path = j.at("model_path").get<std::string>();
  if (j.contains("corpus_path") && !j.at("corpus_path").is_null())
    c.corpus_path = j.at("corpus_path").get<std::string>();
  c.layers = j.value("layers", c.layers);
  c.n_edits = j.value("n_edits", c.n_edits);
  c.target_length = j.value("target_length", c.target_length);
  c.train_size = j.value("train_size", c.train_size);
  c.test_size = j.value("test_size", c.test_size);
  c.perplexity_prompts = j.value("perplexity_prompts", c.perplexity_prompts);
  c.horizon = j.value("horizon", c.horizon);
  c.max_trigger_length = j.value("max_trigger_length", c.max_trigger_length);
  c.theta = j.value("theta", c.theta);
  c.delta_gain = j.value("delta_gain", c.delta_gain);
  c.solver.gamma = j.value("gamma", c.solver.gamma);
  c.solver.step_size = j.value("step_size", c.solver.step_size);
  c.solver.max_iters = j.value("max_iters", c.solver.max_iters);
  if (j.contains("norm_cap") && !j.at("norm_cap").is_null()) c.solver.norm_cap = j.at("norm_cap").get<double>();
  c.solver.no_cap = j.value("no_cap", c.solver.no_cap);
  c.corruption_rate = j.value("corruption_rate", c.corruption_rate);
  if (j.contains("context_mode")) c.context_mode = parse_attack_mode(j.at("context_mode").get<std::string>());
  c.thm3_samples = j.value("thm3_samples", c.thm3_samples);
  c.thm3_budget = j.value("thm3_budget", c.thm3_budget);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

struct Splits {
  std::vector<Prompt> edit;
  Corpus train;
  Corpus test;
  std::vector<Prompt> perplexity;
};

Splits split_corpus(const Corpus& corpus, const PipelineConfig& cfg) {
  std::vector<std::size_t> order(corpus.prompts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = seeded(cfg.seed, 0x5711, 0);
  std::shuffle(order.begin(), order.end(), rng);

  Splits s;
  std::size_t next = 0;
  while (next < order.size() && static_cast<int>(s.edit.size()) < cfg.n_edits) {
    const Prompt p = truncate(corpus.prompts[order[next++]], cfg.max_trigger_length);
    if (p.size() < 2) continue;
    if (std::find(s.edit.begin(), s.edit.end(), p) != s.edit.end()) continue;
    s.edit.push_back(p);
  }
  require(static_cast<int>(s.edit.size()) == cfg.n_edits, "corpus too small for the requested edits");
  const auto take = [&](Corpus& into, int count) {
    while (next < order.size() && static_cast<int>(into.prompts.size()) < count) {
      const Prompt& p = corpus.prompts[order[next++]];
      if (p.size() < 2) continue;
      if (std::find(s.edit.begin(), s.edit.end(), truncate(p, cfg.max_trigger_length)) != s.edit.end()) continue;
      into.prompts.push_back(p);
    }
    require(static_cast<int>(into.prompts.size()) == count, "corpus too small for the requested splits");
  };
  take(s.train, cfg.train_size);
  take(s.test, cfg.test_size);
  s.train.source = corpus.source + "#train";
  s.test.source = corpus.source + "#test";
  const int prompt_len = std::max(1, cfg.horizon / 2);
  for (int i = 0; i < std::min(cfg.perplexity_prompts, cfg.test_size); ++i)
    s.perplexity.push_back(truncate(s.test.prompts[static_cast<std::size_t>(i)], prompt_len));
  return s;
}

Prompt random_target(const ToyModel& model, const Prompt& trigger, int length, std::mt19937_64& rng) {
  const Token avoid = generate_greedy(model, trigger, 1).front();
  std::uniform_int_distribution<int> letter(0, 25);
  Prompt t;
  for (int i = 0; i < length; ++i) t.push_back(static_cast<Token>('a' + letter(rng)));
  while (t.front() == avoid) t.front() = static_cast<Token>('a' + letter(rng));
  return t;
}

struct RatioCache {
  std::vector<Prompt> windows;
  std::vector<double> original;
};

RatioCache ratio_cache(const ToyModel& model, const std::vector<Prompt>& prompts, int horizon) {
  RatioCache c;
  for (const auto& p : prompts) {
    c.windows.push_back(continuation_window(model, p, horizon));
    c.original.push_back(perplexity(model, c.windows.back()));
  }
  return c;
}

std::vector<double> ratios(const ToyModel& edited, const RatioCache& cache) {
  std::vector<double> out;
  for (std::size_t i = 0; i < cache.windows.size(); ++i)
    out.push_back(perplexity(edited, cache.windows[i]) / cache.original[i]);
  return out;
}

nlohmann::json failure(int sample, const std::string& stage, const std::string& message) {
  return {{"sample", sample}, {"stage", stage}, {"message", message}};
}

nlohmann::json theoretical(const BoundResult& b) {
  return {{"delta", b.delta},
          {"n_hat", finite_or_null(b.n_at_delta.n_hat)},
          {"n_lower_bound", b.n_at_delta.n_lower_bound},
          {"from_n_hat", b.fpr_bound},
          {"from_n_lower_bound", b.fallback_bound}};
}

struct LayerAccumulator {
  int requested = 0;
  int completed = 0;
  int successes = 0;
  int monotone = 0;
  std::vector<double> ratio_means;
  std::vector<double> prune_means;
  std::vector<double> fprs;
  std::vector<double> thm3;
  int thm3_compliant = 0;
  nlohmann::json samples = nlohmann::json::array();
  nlohmann::json failures = nlohmann::json::array();
};

nlohmann::json finish_layer(int layer, const LayerAccumulator& a, const BoundResult& bound, bool has_prune,
                            bool has_thm3, double fpr_any) {
  nlohmann::json l;
  l["layer"] = layer;
  l["requested"] = a.requested;
  l["completed"] = a.completed;
  l["edit_success_rate"] = a.requested ? static_cast<double>(a.successes) / a.requested : 0.0;
  l["solver_monotone_rate"] = a.completed ? static_cast<double>(a.monotone) / a.completed : 0.0;
  const Summary ratio = summarise(a.ratio_means);
  l["perplexity_ratio"] = to_json(ratio);
  l["pruning_control"] = has_prune ? to_json(summarise(a.prune_means)) : nlohmann::json(nullptr);
  l["detector_fpr"] = to_json(summarise(a.fprs));
  l["detector_fpr_any"] = fpr_any;
  if (has_thm3) {
    nlohmann::json t = to_json(summarise(a.thm3));
    t["compliant_rate"] = a.thm3.empty() ? 0.0 : static_cast<double>(a.thm3_compliant) / a.thm3.size();
    l["empirical_thm3_fpr"] = t;
  } else {
    l["empirical_thm3_fpr"] = nullptr;
  }
  l["theoretical_fpr"] = theoretical(bound);
  l["samples"] = a.samples;
  l["failures"] = a.failures;
  return l;
}

nlohmann::json run_edit_layer(const PipelineConfig& cfg, const ToyModel& model, int layer, const Splits& splits,
                              const RatioCache& cache) {
  const LayerFeatures train =
      extract_layer_features(model, splits.train, layer, PositionMode::random_position, cfg.seed + 11);
  const LayerFeatures test =
      extract_layer_features(model, splits.test, layer, PositionMode::random_position, cfg.seed + 17);
  std::optional<BiasDirection> bias_direction;
  if (!has_bias(model.family())) bias_direction = compute_bias_direction(train.phi);
  const double delta = 2.0 * cfg.theta * (cfg.theta - 2.0);
  const BoundResult bound = bound_from_estimate(intrinsic_dimension(test.phi, delta));

  const bool attack = cfg.kind == PipelineKind::attack_corrupt || cfg.kind == PipelineKind::attack_context;
  std::vector<Prompt> contexts;
  if (cfg.kind == PipelineKind::attack_context && cfg.context_mode == AttackMode::context_wiki)
    contexts = context_sentences(splits.train.prompts);

  LayerAccumulator acc;
  std::vector<ImplantedNeuron> neurons;
  for (int i = 0; i < cfg.n_edits; ++i) {
    ++acc.requested;
    auto rng = seeded(cfg.seed, static_cast<std::uint64_t>(layer), static_cast<std::uint64_t>(i));
    const Prompt& base = splits.edit[static_cast<std::size_t>(i)];
    nlohmann::json sample = {{"index", i}};
    try {
      ToyModel edited;
      EditRecord record;
      std::optional<Thm3Result> thm3;
      if (!attack) {
        EditRequest req;
        req.trigger = base;
        req.target = random_target(model, base, cfg.target_length, rng);
        req.layer = layer;
        req.theta = cfg.theta;
        req.delta_gain = cfg.delta_gain;
        std::tie(edited, record) = apply_edit(model, req, cfg.solver, bias_direction);
      } else {
        TriggerDistribution dist;
        dist.base_prompt = base;
        dist.corruption_rate = cfg.corruption_rate;
        dist.seed = cfg.seed ^ (static_cast<std::uint64_t>(layer) << 32) ^ static_cast<std::uint64_t>(i);
        if (cfg.kind == PipelineKind::attack_corrupt) {
          dist.mode = AttackMode::corrupted_prompt;
        } else {
          dist.mode = cfg.context_mode;
          dist.contexts = contexts;
        }
        AttackParams params{cfg.theta, cfg.delta_gain, std::nullopt};
        const Prompt target = random_target(model, base, cfg.target_length, rng);
        AttackRecord attack_record;
        std::tie(edited, attack_record) =
            build_attack(model, dist, target, layer, params, cfg.solver, bias_direction, kCandidateBudget);
        record = attack_record.edit;
        sample["rejected_candidates"] = attack_record.rejected_candidates;
        sample["context"] = prompt_id(attack_record.trigger.context);
        try {
          thm3 = empirical_thm3_fpr(dist, attack_record.trigger.prompt, model, layer, params, cfg.thm3_samples,
                                    bias_direction, cfg.thm3_budget, 1u << 20);
          sample["thm3"] = to_json(*thm3);
        } catch (const std::exception& e) {
          acc.failures.push_back(failure(i, "thm3", e.what()));
        }
      }
      ++acc.completed;
      const bool mono = monotone(record.solver_trace);
      acc.monotone += mono ? 1 : 0;
      acc.successes += record.success ? 1 : 0;
      const Summary ratio = summarise(ratios(edited, cache));
      const Summary prune = summarise(ratios(prune_neuron(model, layer, record.pruned_row), cache));
      const FprResult fpr = neuron_fpr({record.neuron}, test.psi);
      const FprResult ideal = detector_fpr({record.neuron.params}, test.phi);
      if (ratio.count) acc.ratio_means.push_back(ratio.mean);
      if (prune.count) acc.prune_means.push_back(prune.mean);
      acc.fprs.push_back(fpr.per_detector.front());
      if (thm3) {
        acc.thm3.push_back(thm3->fraction);
        acc.thm3_compliant += thm3->compliant ? 1 : 0;
      }
      neurons.push_back(record.neuron);
      sample["trigger"] = prompt_id(record.trigger);
      sample["target"] = prompt_id(record.target);
      sample["success"] = record.success;
      sample["solver_ok"] = record.solver_ok;
      sample["monotone"] = mono;
      sample["iterations"] = record.solver_iterations;
      sample["initial_loss"] = record.solver_trace.front();
      sample["final_loss"] = record.solver_trace.back();
      sample["pruned_row"] = record.pruned_row;
      sample["perplexity_ratio"] = ratio.count ? nlohmann::json(ratio.mean) : nlohmann::json(nullptr);
      sample["pruning_ratio"] = prune.count ? nlohmann::json(prune.mean) : nlohmann::json(nullptr);
      sample["detector_fpr"] = fpr.per_detector.front();
      sample["detector_fpr_ideal"] = ideal.per_detector.front();
      acc.samples.push_back(sample);
    } catch (const std::exception& e) {
      acc.failures.push_back(failure(i, attack ? "attack" : "edit", e.what()));
    }
  }
  const double any = neurons.empty() ? 0.0 : neuron_fpr(neurons, test.psi).any;
  nlohmann::json l = finish_layer(layer, acc, bound, true, attack, any);
  l["extra"] = {{"bias_direction", bias_direction ? to_json(*bias_direction) : nlohmann::json(nullptr)},
                {"test_cloud_size", test.phi.size()}};
  return l;
}

nlohmann::json run_jetpack_layer(const PipelineConfig& cfg, const ToyModel& model, int layer, const Splits& splits,
                                 const RatioCache& cache) {
  const LayerFeatures train =
      extract_layer_features(model, splits.train, layer, PositionMode::random_position, cfg.seed + 11);
  const LayerFeatures test =
      extract_layer_features(model, splits.test, layer, PositionMode::random_position, cfg.seed + 17);
  const Vector mu = compute_centroid(train.block_output);
  std::vector<Vector> rho;
  for (Eigen::Index k = 0; k < test.block_output.size(); ++k)
    rho.push_back(jet_normalise(test.block_output.vectors.row(k).transpose(), mu));
  const double delta = 2.0 * cfg.theta * (cfg.theta - 2.0);
  const BoundResult bound = bound_from_estimate(intrinsic_dimension(make_cloud(rho, "jetpack_features"), delta));

  std::vector<EditRequest> requests;
  for (int i = 0; i < cfg.n_edits; ++i) {
    auto rng = seeded(cfg.seed, static_cast<std::uint64_t>(layer), static_cast<std::uint64_t>(i));
    EditRequest r;
    r.trigger = splits.edit[static_cast<std::size_t>(i)];
    r.target = random_target(model, r.trigger, cfg.target_length, rng);
    r.layer = layer;
    requests.push_back(r);
  }
  JetPackOptions options;
  options.theta = cfg.theta;
  options.delta_gain = cfg.delta_gain;
  options.solver = cfg.solver;
  LayerAccumulator acc;
  const JetPackBuild build = build_jetpack(model, layer, requests, mu, options);
  const ToyModel edited = insert_into_model(model, layer, build.block);
  const FprResult fpr = jetpack_fpr(build.block, test.block_output);
  for (std::size_t i = 0; i < build.edits.size(); ++i) {
    const JetPackEditResult& e = build.edits[i];
    ++acc.requested;
    nlohmann::json sample = to_json(e);
    sample["index"] = i;
    bool success = false;
    if (e.included) {
      ++acc.completed;
      success = edit_success(edited, e.trigger, e.target);
      acc.monotone += e.monotone ? 1 : 0;
    } else {
      acc.failures.push_back(failure(static_cast<int>(i), "jetpack_solve", "edit excluded: target not produced"));
    }
    acc.successes += success ? 1 : 0;
    sample["success_with_all_edits"] = success;
    acc.samples.push_back(sample);
  }
  for (double f : fpr.per_detector) acc.fprs.push_back(f);
  const Summary ratio = summarise(ratios(edited, cache));
  if (ratio.count) acc.ratio_means.push_back(ratio.mean);
  nlohmann::json l = finish_layer(layer, acc, bound, false, false, fpr.any);
  l["extra"] = {{"jetpack_size", build.block.size()},
                {"excluded", build.excluded()},
                {"cross_talk", to_json(cross_talk_check(build.block))},
                {"perplexity_ratio_per_prompt", to_json(ratio)}};
  return l;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

}  // namespace

nlohmann::json run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  const ToyModel model = cfg.model_path ? load_model(*cfg.model_path) : init_model(cfg.model);
  std::vector<int> layers = cfg.layers;
  if (layers.empty()) layers.push_back((model.config.n_layers + 1) / 2);
  for (int l : layers) model.check_layer(l);
  require(cfg.horizon <= model.config.context_window, "pipeline: horizon exceeds the context window");

  Corpus corpus;
  if (cfg.corpus_path) {
    corpus = load_corpus(*cfg.corpus_path);
  } else {
    SyntheticCorpusOptions o;
    o.count = cfg.n_edits + cfg.train_size + cfg.test_size + 100;
    o.seed = cfg.seed;
    corpus = synthetic_corpus(o);
  }
  const Splits splits = split_corpus(corpus, cfg);
  const RatioCache cache = ratio_cache(model, splits.perplexity, cfg.horizon);

  const nlohmann::json config = to_json(cfg);
  nlohmann::json report = {{"schema_version", kReportSchemaVersion},
                           {"kind", to_string(cfg.kind)},
                           {"seed", cfg.seed},
                           {"config_hash", config_hash(config)},
                           {"timestamp", utc_timestamp()},
                           {"config", config},
                           {"model", config_to_json(model.config)},
                           {"corpus", corpus.source},
                           {"layers", nlohmann::json::array()}};
  for (int layer : layers) {
    report["layers"].push_back(cfg.kind == PipelineKind::jetpack ? run_jetpack_layer(cfg, model, layer, splits, cache)
                                                                 : run_edit_layer(cfg, model, layer, splits, cache));
  }
  return report;
}

}  // namespace stealth
