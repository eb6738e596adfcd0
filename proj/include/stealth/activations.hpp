#pragma once

#include <cmath>
#include <numbers>

namespace stealth::act {

inline double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double silu(double t) { return t * sigmoid(t); }

inline double silu_grad(double t) {
  const double s = sigmoid(t);
  return s * (1.0 + t * (1.0 - s));
}

// Exact (erf-based) GELU.
inline double gelu(double t) { return 0.5 * t * (1.0 + std::erf(t / std::numbers::sqrt2)); }

inline double gelu_grad(double t) {
  const double cdf = 0.5 * (1.0 + std::erf(t / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + t * pdf;
}

inline double relu(double t) { return t > 0.0 ? t : 0.0; }

}  // namespace stealth::act
