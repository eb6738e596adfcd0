#pragma once

// Data-parallel scans over feature clouds. Each kernel exists twice: a serial
// reference and an OpenMP version. Both produce bitwise-identical results for
// any thread count: counts are integer reductions and floating sums use a fixed
// block decomposition combined in block order.

#include "stealth/linalg.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace stealth::kernels {

/// Rows per block for the fixed-order floating reductions.
inline constexpr Eigen::Index kReductionBlock = 256;

/// Pair statistic <x_i - x_j, x_j> = <x_i, x_j> - |x_j|^2, summed in a fixed order.
inline double pair_statistic(const double* xi, const double* xj, Eigen::Index d) {
  double dot = 0.0;
  double nj = 0.0;
  for (Eigen::Index k = 0; k < d; ++k) {
    dot += xi[k] * xj[k];
    nj += xj[k] * xj[k];
  }
  return dot - nj;
}

/// Uniform ordered pairs (i, j), i != j, with replacement. Generated per chunk from
/// (seed, chunk index) so serial and parallel scans see the same pairs.
struct PairSample {
  std::uint64_t seed = 0;
  std::uint64_t count = 0;
};

namespace serial {
/// counts[k] = #{ordered (i, j), i != j : <x_i - x_j, x_j> >= deltas[k]}; deltas ascending.
std::vector<std::uint64_t> count_separable_pairs(const RowMatrix& x, std::span<const double> deltas);
std::vector<std::uint64_t> count_separable_sampled(const RowMatrix& x, std::span<const double> deltas,
                                                   PairSample sample);
Vector mean(const RowMatrix& x);
/// (1/N) sum (x_i - centre)(x_i - centre)^T.
Matrix covariance(const RowMatrix& x, const Vector& centre);
/// hits[i] = 1 iff <x_i - tau, tau - c> + theta >= 0.
std::vector<std::uint8_t> cap_hits(const RowMatrix& x, const Vector& tau, const Vector& c, double theta);
}  // namespace serial

namespace parallel {
std::vector<std::uint64_t> count_separable_pairs(const RowMatrix& x, std::span<const double> deltas);
std::vector<std::uint64_t> count_separable_sampled(const RowMatrix& x, std::span<const double> deltas,
                                                   PairSample sample);
Vector mean(const RowMatrix& x);
Matrix covariance(const RowMatrix& x, const Vector& centre);
std::vector<std::uint8_t> cap_hits(const RowMatrix& x, const Vector& tau, const Vector& c, double theta);
}  // namespace parallel

}  // namespace stealth::kernels
