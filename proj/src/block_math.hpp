#pragma once

// Per-position block arithmetic shared by the decoder and the injection solver's
// tail pass, so both produce identical numbers.

#include "stealth/activations.hpp"
#include "stealth/toy_model.hpp"

#include <cmath>

namespace stealth::detail {

struct AttentionStep {
  Vector normed;
  Vector q;
  Vector probs;  // over positions 0..t
  Vector mixed;  // sum_s probs_s v_s
  Vector out;    // z + Wo mixed
};

/// Single-head causal attention at position t. Writes k_t, v_t into the caches.
inline AttentionStep attention_step(const Block& block, Family family, const Vector& z,
                                    RowMatrix& keys, RowMatrix& values, int t) {
  AttentionStep s;
  s.normed = normalise(family, block.mix_norm, z);
  s.q = block.wq * s.normed;
  keys.row(t) = (block.wk * s.normed).transpose();
  values.row(t) = (block.wv * s.normed).transpose();
  const double scale = 1.0 / std::sqrt(static_cast<double>(z.size()));
  s.probs.resize(t + 1);
  for (int r = 0; r <= t; ++r) s.probs(r) = s.q.dot(keys.row(r).transpose()) * scale;
  const double top = s.probs.maxCoeff();
  s.probs = (s.probs.array() - top).exp();
  s.probs /= s.probs.sum();
  s.mixed = Vector::Zero(z.size());
  for (int r = 0; r <= t; ++r) s.mixed += s.probs(r) * values.row(r).transpose();
  s.out = z + block.wo * s.mixed;
  return s;
}

struct MlpStep {
  Vector normed;  // eta(x)
  Vector pre;     // W1 eta(x) + b1
  Vector factor;  // F(x); empty for gpt_style
  Vector gate;    // F .* sigma(pre)
  Vector state;   // updated recurrence state (mamba_style)
  Vector out;     // x + W2 gate + b2
};

inline MlpStep mlp_step(const Block& block, Family family, const Vector& x,
                        const Vector& prev_state) {
  MlpStep s;
  s.normed = normalise(family, block.mlp_norm, x);
  s.pre = block.w1 * s.normed;
  if (has_bias(family)) s.pre += block.b1;
  switch (family) {
    case Family::gpt_style:
      s.gate = s.pre.unaryExpr([](double v) { return act::gelu(v); });
      break;
    case Family::llama_style:
      s.factor = block.w3 * s.normed;
      s.gate = s.factor.cwiseProduct(s.pre.unaryExpr([](double v) { return act::silu(v); }));
      break;
    case Family::mamba_style: {
      const Vector drive = block.w_state * s.normed;
      s.state = block.decay.cwiseProduct(prev_state) +
                (Vector::Ones(drive.size()) - block.decay).cwiseProduct(drive);
      s.factor = s.state;
      s.gate = s.factor.cwiseProduct(s.pre.unaryExpr([](double v) { return act::silu(v); }));
      break;
    }
  }
  s.out = x + block.w2 * s.gate;
  if (has_bias(family)) s.out += block.b2;
  return s;
}

inline Vector output_logits(const ToyModel& model, const Vector& h) {
  return model.unembedding.transpose() * normalise(model.family(), model.final_norm, h);
}

/// d eta / dx applied transposed to an upstream gradient.
inline Vector normalise_backward(Family family, const NormWeights& norm, const Vector& x,
                                 const Vector& grad_out) {
  const double d = static_cast<double>(x.size());
  const Vector gw = norm.weight.cwiseProduct(grad_out);
  if (family == Family::gpt_style) {
    const double mean = x.mean();
    const Vector centred = x.array() - mean;
    const double sd = std::sqrt(centred.squaredNorm() / d);
    const Vector xhat = centred / sd;
    const double gmean = gw.mean();
    const double gx = gw.dot(xhat) / d;
    return (gw.array() - gmean - xhat.array() * gx).matrix() / sd;
  }
  const double r = x.norm();
  const Vector xhat = x / r;
  return (std::sqrt(d) / r) * (gw - xhat * xhat.dot(gw));
}

}  // namespace stealth::detail
