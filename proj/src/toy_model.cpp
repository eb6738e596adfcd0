#include "stealth/toy_model.hpp"

#include "block_math.hpp"
#include "stealth/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace stealth {

std::string to_string(Family family) {
  switch (family) {
    case Family::gpt_style: return "gpt_style";
    case Family::llama_style: return "llama_style";
    case Family::mamba_style: return "mamba_style";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  if (name == "gpt_style" || name == "gpt") return Family::gpt_style;
  if (name == "llama_style" || name == "llama") return Family::llama_style;
  if (name == "mamba_style" || name == "mamba") return Family::mamba_style;
  throw ValidationError("unknown model family: " + std::string(name));
}

void ModelConfig::validate() const {
  require(d >= 2, "d must be >= 2");
  require(n_hidden >= d, "n_hidden must be >= d");
  require(n_layers >= 2, "n_layers must be >= 2");
  require(context_window >= 8, "context_window must be >= 8");
}

void ToyModel::check_layer(int layer) const {
  require(layer >= 1 && layer <= config.n_layers,
          "layer " + std::to_string(layer) + " out of range [1, " +
              std::to_string(config.n_layers) + "]");
}

const Block& ToyModel::block(int layer) const {
  check_layer(layer);
  return blocks[static_cast<std::size_t>(layer - 1)];
}

Block& ToyModel::block(int layer) {
  check_layer(layer);
  return blocks[static_cast<std::size_t>(layer - 1)];
}

namespace {

class Initialiser {
 public:
  explicit Initialiser(std::uint64_t seed) : rng_(seed) {}

  Matrix gaussian(int rows, int cols, double scale) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = scale * normal_(rng_);
    return m;
  }

  Vector gaussian(int n, double scale) { return gaussian(n, 1, scale).col(0); }

  // Magnitude in [0.1, 1.1], random sign: never zero, so nu is well defined.
  Vector norm_weight(int n) {
    Vector w(n);
    std::uniform_real_distribution<double> mag(0.1, 1.1);
    std::bernoulli_distribution sign(0.5);
    for (int i = 0; i < n; ++i) {
      const double m = mag(rng_);
      w(i) = sign(rng_) ? m : -m;
    }
    return w;
  }

  Vector uniform(int n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = u(rng_);
    return v;
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

NormWeights make_norm(Initialiser& init, Family family, int d) {
  NormWeights n;
  n.weight = init.norm_weight(d);
  if (has_bias(family)) n.bias = init.gaussian(d, 0.1);
  return n;
}

}  // namespace

ToyModel init_model(const ModelConfig& config) {
  config.validate();
  Initialiser init(config.seed);
  const int d = config.d;
  const int n = config.n_hidden;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const Family family = config.family;

  ToyModel m;
  m.config = config;
  // A shared offset gives every embedding a common component, so feature clouds
  // have a non-trivial mean as in trained models.
  const Vector offset = init.gaussian(d, scale);
  m.embeddings = init.gaussian(kVocabSize, d, scale);
  m.embeddings.rowwise() += offset.transpose();
  m.positions = init.gaussian(config.context_window, d, 0.5 * scale);

  m.blocks.resize(static_cast<std::size_t>(config.n_layers));
  for (Block& b : m.blocks) {
    if (is_transformer(family)) {
      b.mix_norm = make_norm(init, family, d);
      b.wq = init.gaussian(d, d, scale);
      b.wk = init.gaussian(d, d, scale);
      b.wv = init.gaussian(d, d, scale);
      b.wo = init.gaussian(d, d, scale);
    } else {
      b.w_state = init.gaussian(n, d, scale);
      b.decay = init.uniform(n, 0.5, 0.95);
    }
    b.mlp_norm = make_norm(init, family, d);
    b.w1 = init.gaussian(n, d, scale);
    b.w2 = init.gaussian(d, n, scale);
    if (family == Family::llama_style) b.w3 = init.gaussian(n, d, scale);
    if (has_bias(family)) {
      b.b1 = init.gaussian(n, 0.1);
      b.b2 = init.gaussian(d, 0.1);
    }
  }
  m.final_norm = make_norm(init, family, d);
  m.unembedding = init.gaussian(d, kVocabSize, 1.0);
  return m;
}

namespace {

bool norm_equal(const NormWeights& a, const NormWeights& b) {
  return bitwise_equal(a.weight, b.weight) && bitwise_equal(a.bias, b.bias);
}

bool block_equal(const Block& a, const Block& b) {
  return norm_equal(a.mix_norm, b.mix_norm) && bitwise_equal(a.wq, b.wq) &&
         bitwise_equal(a.wk, b.wk) && bitwise_equal(a.wv, b.wv) && bitwise_equal(a.wo, b.wo) &&
         bitwise_equal(a.w_state, b.w_state) && bitwise_equal(a.decay, b.decay) &&
         norm_equal(a.mlp_norm, b.mlp_norm) && bitwise_equal(a.w1, b.w1) &&
         bitwise_equal(a.w2, b.w2) && bitwise_equal(a.w3, b.w3) && bitwise_equal(a.b1, b.b1) &&
         bitwise_equal(a.b2, b.b2);
}

}  // namespace

bool bitwise_equal(const ToyModel& a, const ToyModel& b) {
  const auto& ca = a.config;
  const auto& cb = b.config;
  if (ca.family != cb.family || ca.d != cb.d || ca.n_hidden != cb.n_hidden ||
      ca.n_layers != cb.n_layers || ca.context_window != cb.context_window || ca.seed != cb.seed)
    return false;
  if (!bitwise_equal(a.embeddings, b.embeddings) || !bitwise_equal(a.positions, b.positions) ||
      !norm_equal(a.final_norm, b.final_norm) || !bitwise_equal(a.unembedding, b.unembedding))
    return false;
  if (a.blocks.size() != b.blocks.size()) return false;
  for (std::size_t i = 0; i < a.blocks.size(); ++i)
    if (!block_equal(a.blocks[i], b.blocks[i])) return false;
  if (a.jetpacks.size() != b.jetpacks.size()) return false;
  for (const auto& [layer, jp] : a.jetpacks) {
    const auto it = b.jetpacks.find(layer);
    if (it == b.jetpacks.end() || !bitwise_equal(jp, it->second)) return false;
  }
  return true;
}

Vector rms_norm(const Vector& x, const Vector& w) {
  require(x.size() == w.size(), "rms_norm: shape mismatch");
  const double r = x.norm();
  require(r > 0.0, "rms_norm: zero-norm input");
  return std::sqrt(static_cast<double>(x.size())) * w.cwiseProduct(x / r);
}

Vector layer_norm(const Vector& x, const Vector& w, const Vector& b) {
  require(x.size() == w.size() && x.size() == b.size(), "layer_norm: shape mismatch");
  const double mean = x.mean();
  const Vector centred = x.array() - mean;
  const double var = centred.squaredNorm() / static_cast<double>(x.size());
  require(var > 0.0, "layer_norm: zero-variance input");
  return w.cwiseProduct(centred / std::sqrt(var)) + b;
}

Vector normalise(Family family, const NormWeights& norm, const Vector& x) {
  if (family == Family::gpt_style) return layer_norm(x, norm.weight, norm.bias);
  return rms_norm(x, norm.weight);
}

Vector nu_map(Family family, const NormWeights& norm, const Vector& zeta) {
  require(zeta.size() == norm.weight.size(), "nu_map: shape mismatch");
  require((norm.weight.array() != 0.0).all(), "nu_map: normalisation weight has a zero entry");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(zeta.size()));
  if (family == Family::gpt_style) return inv_sqrt_d * (zeta - norm.bias).cwiseQuotient(norm.weight);
  return inv_sqrt_d * zeta.cwiseQuotient(norm.weight);
}

Decoder::Decoder(const ToyModel& model, LayerProbe* probe) : model_(&model), probe_(probe) {
  if (probe_) model.check_layer(probe_->layer);
  const int ctx = model.config.context_window;
  caches_.resize(model.blocks.size());
  for (LayerCache& c : caches_) {
    if (is_transformer(model.family())) {
      c.keys = RowMatrix::Zero(ctx, model.d());
      c.values = RowMatrix::Zero(ctx, model.d());
    } else {
      c.state = Vector::Zero(model.config.n_hidden);
    }
  }
}

Vector Decoder::push(Token token) {
  const ToyModel& m = *model_;
  require(length_ < m.config.context_window, "prompt exceeds the context window");
  const int t = length_;
  const Family family = m.family();
  Vector h = m.embeddings.row(token).transpose() + m.positions.row(t).transpose();
  for (int layer = 1; layer <= m.config.n_layers; ++layer) {
    const Block& block = m.blocks[static_cast<std::size_t>(layer - 1)];
    LayerCache& cache = caches_[static_cast<std::size_t>(layer - 1)];
    Vector x = is_transformer(family)
                   ? detail::attention_step(block, family, h, cache.keys, cache.values, t).out
                   : h;
    detail::MlpStep mlp = detail::mlp_step(block, family, x, cache.state);
    if (family == Family::mamba_style) cache.state = mlp.state;
    if (probe_ && probe_->layer == layer) {
      probe_->mlp_input.push_back(x);
      probe_->psi.push_back(mlp.normed);
      probe_->gate.push_back(mlp.gate);
      probe_->block_output.push_back(mlp.out);
    }
    h = std::move(mlp.out);
    if (const auto jp = m.jetpacks.find(layer); jp != m.jetpacks.end())
      h = jetpack_forward(jp->second, h);
  }
  ++length_;
  return detail::output_logits(m, h);
}

RowMatrix forward_logits(const ToyModel& model, const Prompt& prompt) {
  require(!prompt.empty(), "empty prompt");
  require(static_cast<int>(prompt.size()) <= model.config.context_window,
          "prompt exceeds the context window");
  Decoder dec(model);
  RowMatrix out(static_cast<Eigen::Index>(prompt.size()), kVocabSize);
  for (std::size_t i = 0; i < prompt.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = dec.push(prompt[i]).transpose();
  return out;
}

LayerProbe probe_layer(const ToyModel& model, int layer, const Prompt& prompt) {
  require(!prompt.empty(), "empty prompt");
  require(static_cast<int>(prompt.size()) <= model.config.context_window,
          "prompt exceeds the context window");
  LayerProbe probe;
  probe.layer = layer;
  Decoder dec(model, &probe);
  for (Token tok : prompt) dec.push(tok);
  return probe;
}

Vector input_map_psi(const ToyModel& model, int layer, const Prompt& prompt) {
  return probe_layer(model, layer, prompt).psi.back();
}

Vector feature_map_phi(const ToyModel& model, int layer, const Prompt& prompt) {
  return nu_map(model.family(), model.block(layer).mlp_norm, input_map_psi(model, layer, prompt));
}

int argmax_token(const Vector& logits) {
  int best = 0;
  for (int i = 1; i < logits.size(); ++i)
    if (logits(i) > logits(best)) best = i;
  return best;
}

Vector log_softmax(const Vector& logits) {
  const double top = logits.maxCoeff();
  const double lse = top + std::log((logits.array() - top).exp().sum());
  return logits.array() - lse;
}

Prompt generate_greedy(const ToyModel& model, const Prompt& prompt, int max_new) {
  require(max_new >= 1, "max_new must be >= 1");
  require(!prompt.empty(), "empty prompt");
  require(static_cast<int>(prompt.size()) + max_new <= model.config.context_window,
          "generation would overflow the context window");
  Decoder dec(model);
  Vector logits;
  for (Token tok : prompt) logits = dec.push(tok);
  Prompt out;
  out.reserve(static_cast<std::size_t>(max_new));
  for (int i = 0; i < max_new; ++i) {
    const Token next = static_cast<Token>(argmax_token(logits));
    out.push_back(next);
    if (i + 1 < max_new) logits = dec.push(next);
  }
  return out;
}

}  // namespace stealth
