#include "stealth/injection_solver.hpp"

#include "block_math.hpp"
#include "stealth/error.hpp"

#include <cmath>
#include <limits>

namespace stealth {

void SolverConfig::validate() const {
  require(gamma > 0.0, "solver: gamma must be > 0");
  require(max_iters >= 1, "solver: max_iters must be >= 1");
  require(step_size > 0.0, "solver: step_size must be > 0");
  require(!norm_cap || *norm_cap > 0.0, "solver: norm_cap must be > 0");
}

TeacherForcing teacher_forcing(const Prompt& trigger, const Prompt& target) {
  require(!trigger.empty(), "empty trigger prompt");
  require(!target.empty(), "empty target response");
  TeacherForcing tf;
  tf.sequence = trigger;
  tf.sequence.insert(tf.sequence.end(), target.begin(), target.end() - 1);
  const int start = static_cast<int>(trigger.size()) - 1;
  for (std::size_t i = 0; i < target.size(); ++i) {
    tf.positions.push_back(start + static_cast<int>(i));
    tf.tokens.push_back(target[i]);
  }
  return tf;
}

InjectionObjective::InjectionObjective(InjectionProblem problem, double gamma)
    : problem_(std::move(problem)), gamma_(gamma) {
  require(problem_.model != nullptr, "injection: no model");
  problem_.model->check_layer(problem_.layer);
  for (const auto& [l, jp] : problem_.model->jetpacks)
    require(l < problem_.layer, "injection: jet-packs at or after the edited layer are not supported");
  require(problem_.length >= 1 && static_cast<int>(problem_.base.size()) == problem_.length &&
              problem_.gain.size() == problem_.length,
          "injection: inconsistent problem sizes");
  require(problem_.score_positions.size() == problem_.score_tokens.size() && !problem_.score_positions.empty(),
          "injection: nothing to score");
  require(problem_.u0.size() == problem_.model->d(), "injection: u0 dimension mismatch");
  const double n2 = problem_.u0.squaredNorm();
  unit_normaliser_ = !(n2 > 0.0);
  normaliser_ = unit_normaliser_ ? 1.0 : n2;
}

double InjectionObjective::value(const Vector& u) const { return evaluate(u, nullptr); }

double InjectionObjective::value_and_gradient(const Vector& u, Vector& grad) const {
  return evaluate(u, &grad);
}

double InjectionObjective::nll(const Vector& u) const {
  return evaluate(u, nullptr) - gamma_ * u.squaredNorm() / normaliser_;
}

namespace {

struct TailLayer {
  std::vector<Vector> input;  // z_t
  std::vector<detail::AttentionStep> attn;
  RowMatrix keys, values;
  std::vector<Vector> mid;    // x_t
  std::vector<detail::MlpStep> mlp;
};

}  // namespace

double InjectionObjective::evaluate(const Vector& u, Vector* grad) const {
  const ToyModel& m = *problem_.model;
  const Family family = m.family();
  const int T = problem_.length;
  const int d = m.d();
  const int first = problem_.layer + 1;
  const int L = m.config.n_layers;

  std::vector<Vector> h(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) h[t] = problem_.base[t] + problem_.gain(t) * u;

  std::vector<TailLayer> layers(static_cast<std::size_t>(std::max(0, L - first + 1)));
  for (int l = first; l <= L; ++l) {
    const Block& block = m.block(l);
    TailLayer& tl = layers[static_cast<std::size_t>(l - first)];
    tl.input = h;
    if (is_transformer(family)) {
      tl.keys = RowMatrix::Zero(T, d);
      tl.values = RowMatrix::Zero(T, d);
    }
    Vector state = family == Family::mamba_style ? Vector::Zero(m.config.n_hidden) : Vector();
    for (int t = 0; t < T; ++t) {
      Vector x = h[t];
      if (is_transformer(family)) {
        tl.attn.push_back(detail::attention_step(block, family, h[t], tl.keys, tl.values, t));
        x = tl.attn.back().out;
      }
      tl.mid.push_back(x);
      tl.mlp.push_back(detail::mlp_step(block, family, x, state));
      if (family == Family::mamba_style) state = tl.mlp.back().state;
      h[t] = tl.mlp.back().out;
    }
  }

  double loss = gamma_ * u.squaredNorm() / normaliser_;
  std::vector<Vector> dh(static_cast<std::size_t>(T), Vector::Zero(d));
  for (std::size_t i = 0; i < problem_.score_positions.size(); ++i) {
    const int pos = problem_.score_positions[i];
    const Vector logits = detail::output_logits(m, h[pos]);
    const Vector logp = log_softmax(logits);
    loss -= logp(problem_.score_tokens[i]);
    if (grad) {
      Vector dlogits = logp.array().exp();
      dlogits(problem_.score_tokens[i]) -= 1.0;
      const Vector dn = m.unembedding * dlogits;
      dh[pos] += detail::normalise_backward(family, m.final_norm, h[pos], dn);
    }
  }
  if (!grad) return loss;

  for (int l = L; l >= first; --l) {
    const Block& block = m.block(l);
    const TailLayer& tl = layers[static_cast<std::size_t>(l - first)];
    // Editable map: dx = dy + J_m^T dy.
    std::vector<Vector> dx(static_cast<std::size_t>(T));
    Vector carry = family == Family::mamba_style ? Vector::Zero(m.config.n_hidden) : Vector();
    for (int t = T - 1; t >= 0; --t) {
      const detail::MlpStep& s = tl.mlp[t];
      const Vector dgate = block.w2.transpose() * dh[t];
      Vector dn;
      switch (family) {
        case Family::gpt_style: {
          const Vector dpre = dgate.cwiseProduct(s.pre.unaryExpr([](double v) { return act::gelu_grad(v); }));
          dn = block.w1.transpose() * dpre;
          break;
        }
        case Family::llama_style: {
          const Vector a = s.pre.unaryExpr([](double v) { return act::silu(v); });
          const Vector dfactor = dgate.cwiseProduct(a);
          const Vector dpre = dgate.cwiseProduct(s.factor).cwiseProduct(
              s.pre.unaryExpr([](double v) { return act::silu_grad(v); }));
          dn = block.w1.transpose() * dpre + block.w3.transpose() * dfactor;
          break;
        }
        case Family::mamba_style: {
          const Vector a = s.pre.unaryExpr([](double v) { return act::silu(v); });
          const Vector dstate = dgate.cwiseProduct(a) + carry;
          const Vector dpre = dgate.cwiseProduct(s.factor).cwiseProduct(
              s.pre.unaryExpr([](double v) { return act::silu_grad(v); }));
          const Vector ddrive = (Vector::Ones(dstate.size()) - block.decay).cwiseProduct(dstate);
          carry = block.decay.cwiseProduct(dstate);
          dn = block.w1.transpose() * dpre + block.w_state.transpose() * ddrive;
          break;
        }
      }
      dx[t] = dh[t] + detail::normalise_backward(family, block.mlp_norm, tl.mid[t], dn);
    }
    if (!is_transformer(family)) {
      dh = std::move(dx);
      continue;
    }
    // Attention: z -> x = z + Wo sum_s P_ts v_s.
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<Vector> dq(static_cast<std::size_t>(T), Vector::Zero(d));
    std::vector<Vector> dk(static_cast<std::size_t>(T), Vector::Zero(d));
    std::vector<Vector> dv(static_cast<std::size_t>(T), Vector::Zero(d));
    for (int t = 0; t < T; ++t) {
      const detail::AttentionStep& a = tl.attn[t];
      const Vector dmixed = block.wo.transpose() * dx[t];
      Vector dp(t + 1);
      for (int s = 0; s <= t; ++s) {
        dp(s) = dmixed.dot(tl.values.row(s).transpose());
        dv[s] += a.probs(s) * dmixed;
      }
      const double centre = a.probs.dot(dp);
      for (int s = 0; s <= t; ++s) {
        const double dscore = a.probs(s) * (dp(s) - centre) * scale;
        dq[t] += dscore * tl.keys.row(s).transpose();
        dk[s] += dscore * a.q;
      }
    }
    for (int t = 0; t < T; ++t) {
      const Vector dn = block.wq.transpose() * dq[t] + block.wk.transpose() * dk[t] + block.wv.transpose() * dv[t];
      dh[t] = dx[t] + detail::normalise_backward(family, block.mix_norm, tl.input[t], dn);
    }
  }

  *grad = (2.0 * gamma_ / normaliser_) * u;
  for (int t = 0; t < T; ++t) *grad += problem_.gain(t) * dh[t];
  return loss;
}

SolveResult minimise(const InjectionObjective& objective, const Vector& start, const SolverConfig& config) {
  config.validate();
  SolveResult r;
  const double u0_norm = objective.problem().u0.norm();
  if (config.norm_cap) {
    r.norm_cap = config.norm_cap;
  } else if (!config.no_cap && u0_norm > 0.0) {
    r.norm_cap = 10.0 * u0_norm;
  }
  auto project = [&](Vector v) {
    if (r.norm_cap && v.norm() > *r.norm_cap) v *= *r.norm_cap / v.norm();
    return v;
  };

  r.u = project(start);
  Vector grad;
  double f = objective.value_and_gradient(r.u, grad);
  r.trace.push_back(f);
  if (!std::isfinite(f)) {
    r.finite = false;
    return r;
  }
  double step = config.step_size;
  for (int it = 0; it < config.max_iters; ++it) {
    double t = step;
    bool accepted = false;
    Vector candidate;
    double fc = std::numeric_limits<double>::infinity();
    for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
      candidate = project(r.u - t * grad);
      fc = objective.value(candidate);
      const double predicted = config.armijo * grad.dot(candidate - r.u);
      if (std::isfinite(fc) && fc <= f && fc <= f + predicted) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      r.converged = true;
      break;
    }
    const double rel = (f - fc) / std::max(std::abs(f), 1e-12);
    r.u = candidate;
    f = objective.value_and_gradient(r.u, grad);
    r.trace.push_back(f);
    r.iterations = it + 1;
    if (!std::isfinite(f)) {
      r.finite = false;
      break;
    }
    step = std::min(2.0 * t, 1e6);
    if (rel < config.rel_tol) {
      r.converged = true;
      break;
    }
  }
  return r;
}

}  // namespace stealth
