#pragma once

// Output-vector search shared by in-place edits and jet-pack edits. In both cases
// the block-`layer` output is affine in the unknown vector u,
//   y_t(u) = base_t + gain_t u,
// so the loss only needs the model tail (blocks after `layer`) to be re-run.

#include "stealth/toy_model.hpp"

#include <optional>
#include <vector>

namespace stealth {

struct SolverConfig {
  double gamma = 0.5;      // weight of |u|^2/|u0|^2
  double step_size = 1.0;  // initial trial step of the line search
  int max_iters = 500;
  double rel_tol = 1e-6;   // stop once the relative decrease falls below this
  double armijo = 1e-4;
  /// Upper bound on |u|; nullopt means "10 |u0|" when |u0| > 0, otherwise no cap.
  std::optional<double> norm_cap;
  bool no_cap = false;     // disables the default cap

  void validate() const;
};

struct InjectionProblem {
  const ToyModel* model = nullptr;
  int layer = 1;
  int length = 0;             // positions in the teacher-forced sequence
  std::vector<Vector> base;   // y_t with the injected column zeroed
  Vector gain;                // scalar activation multiplying u at each position
  std::vector<int> score_positions;
  std::vector<Token> score_tokens;
  Vector u0;                  // original column (zero for jet-pack edits)
};

/// Teacher-forced sequence p_trig + target[0..T-2] and the (position, token) pairs scored.
struct TeacherForcing {
  Prompt sequence;
  std::vector<int> positions;
  std::vector<Token> tokens;
};
TeacherForcing teacher_forcing(const Prompt& trigger, const Prompt& target);

/// Lambda(u) = -sum_i log softmax(logits_{pos_i})[tok_i] + gamma |u|^2/|u0|^2, evaluated
/// through the tail only, with a reverse-mode gradient in u.
class InjectionObjective {
 public:
  InjectionObjective(InjectionProblem problem, double gamma);

  double value(const Vector& u) const;
  double value_and_gradient(const Vector& u, Vector& grad) const;
  /// Negative log-likelihood part only.
  double nll(const Vector& u) const;

  const InjectionProblem& problem() const { return problem_; }
  /// |u0|^2, or 1 when u0 is zero.
  double normaliser() const { return normaliser_; }
  bool unit_normaliser() const { return unit_normaliser_; }

 private:
  double evaluate(const Vector& u, Vector* grad) const;

  InjectionProblem problem_;
  double gamma_;
  double normaliser_;
  bool unit_normaliser_;
};

struct SolveResult {
  Vector u;
  std::vector<double> trace;  // Lambda after every accepted step, trace[0] = Lambda(start)
  int iterations = 0;
  bool converged = false;
  bool finite = true;
  std::optional<double> norm_cap;
};

/// Gradient descent with halving backtracking (Armijo) and optional projection onto
/// the |u| <= cap ball. Accepted steps never increase Lambda.
SolveResult minimise(const InjectionObjective& objective, const Vector& start, const SolverConfig& config);

}  // namespace stealth
