#include "stealth/kernels.hpp"

#include "stealth/error.hpp"

#include <omp.h>

#include <algorithm>
#include <random>

namespace stealth::kernels {

namespace {

constexpr std::uint64_t kPairChunk = 1u << 16;

// Number of deltas <= s, i.e. how many thresholds the pair clears.
inline std::size_t bucket(std::span<const double> deltas, double s) {
  return static_cast<std::size_t>(std::upper_bound(deltas.begin(), deltas.end(), s) - deltas.begin());
}

std::vector<std::uint64_t> suffix_counts(const std::vector<std::uint64_t>& hist) {
  // hist has deltas.size() + 1 buckets; counts[k] = sum of hist[b] for b > k.
  std::vector<std::uint64_t> counts(hist.size() - 1, 0);
  std::uint64_t running = 0;
  for (std::size_t b = hist.size() - 1; b >= 1; --b) {
    running += hist[b];
    counts[b - 1] = running;
  }
  return counts;
}

void check_sorted(std::span<const double> deltas) {
  require(std::is_sorted(deltas.begin(), deltas.end()), "deltas must be ascending");
}

inline void draw_pair(std::mt19937_64& rng, std::uint64_t n, std::uint64_t& i, std::uint64_t& j) {
  std::uniform_int_distribution<std::uint64_t> first(0, n - 1);
  std::uniform_int_distribution<std::uint64_t> second(0, n - 2);
  i = first(rng);
  j = second(rng);
  if (j >= i) ++j;
}

inline std::uint64_t chunk_seed(std::uint64_t seed, std::uint64_t chunk) {
  return seed ^ (0x9e3779b97f4a7c15ULL * (chunk + 1));
}

void sampled_chunk(const RowMatrix& x, std::span<const double> deltas, PairSample sample,
                   std::uint64_t chunk, std::vector<std::uint64_t>& hist) {
  const std::uint64_t begin = chunk * kPairChunk;
  const std::uint64_t end = std::min<std::uint64_t>(sample.count, begin + kPairChunk);
  std::mt19937_64 rng(chunk_seed(sample.seed, chunk));
  const auto n = static_cast<std::uint64_t>(x.rows());
  for (std::uint64_t p = begin; p < end; ++p) {
    std::uint64_t i, j;
    draw_pair(rng, n, i, j);
    const double s = pair_statistic(x.row(static_cast<Eigen::Index>(i)).data(),
                                    x.row(static_cast<Eigen::Index>(j)).data(), x.cols());
    ++hist[bucket(deltas, s)];
  }
}

inline bool in_cap(const double* xi, const Vector& tau, const Vector& axis, double theta) {
  // <x - tau, tau - c> + theta, accumulated in a fixed order.
  double acc = 0.0;
  for (Eigen::Index k = 0; k < tau.size(); ++k) acc += (xi[k] - tau(k)) * axis(k);
  return acc + theta >= 0.0;
}

Vector block_sum(const RowMatrix& x, Eigen::Index b0) {
  const Eigen::Index b1 = std::min(x.rows(), b0 + kReductionBlock);
  Vector s = Vector::Zero(x.cols());
  for (Eigen::Index i = b0; i < b1; ++i) s += x.row(i).transpose();
  return s;
}

Matrix block_outer(const RowMatrix& x, const Vector& centre, Eigen::Index b0) {
  const Eigen::Index b1 = std::min(x.rows(), b0 + kReductionBlock);
  Matrix s = Matrix::Zero(x.cols(), x.cols());
  for (Eigen::Index i = b0; i < b1; ++i) {
    const Vector e = x.row(i).transpose() - centre;
    s.noalias() += e * e.transpose();
  }
  return s;
}

Eigen::Index block_count(const RowMatrix& x) {
  return (x.rows() + kReductionBlock - 1) / kReductionBlock;
}

}  // namespace

namespace serial {

std::vector<std::uint64_t> count_separable_pairs(const RowMatrix& x, std::span<const double> deltas) {
  check_sorted(deltas);
  std::vector<std::uint64_t> hist(deltas.size() + 1, 0);
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) ++hist[bucket(deltas, pair_statistic(x.row(i).data(), x.row(j).data(), d))];
  return suffix_counts(hist);
}

std::vector<std::uint64_t> count_separable_sampled(const RowMatrix& x, std::span<const double> deltas,
                                                   PairSample sample) {
  check_sorted(deltas);
  require(x.rows() >= 2, "need at least two vectors");
  std::vector<std::uint64_t> hist(deltas.size() + 1, 0);
  const std::uint64_t chunks = (sample.count + kPairChunk - 1) / kPairChunk;
  for (std::uint64_t c = 0; c < chunks; ++c) sampled_chunk(x, deltas, sample, c, hist);
  return suffix_counts(hist);
}

Vector mean(const RowMatrix& x) {
  Vector s = Vector::Zero(x.cols());
  for (Eigen::Index b = 0; b < block_count(x); ++b) s += block_sum(x, b * kReductionBlock);
  return s / static_cast<double>(x.rows());
}

Matrix covariance(const RowMatrix& x, const Vector& centre) {
  Matrix s = Matrix::Zero(x.cols(), x.cols());
  for (Eigen::Index b = 0; b < block_count(x); ++b) s += block_outer(x, centre, b * kReductionBlock);
  return s / static_cast<double>(x.rows());
}

std::vector<std::uint8_t> cap_hits(const RowMatrix& x, const Vector& tau, const Vector& c, double theta) {
  const Vector axis = tau - c;
  std::vector<std::uint8_t> hits(static_cast<std::size_t>(x.rows()), 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) hits[static_cast<std::size_t>(i)] = in_cap(x.row(i).data(), tau, axis, theta);
  return hits;
}

}  // namespace serial

namespace parallel {

std::vector<std::uint64_t> count_separable_pairs(const RowMatrix& x, std::span<const double> deltas) {
  check_sorted(deltas);
  const std::size_t buckets = deltas.size() + 1;
  std::vector<std::uint64_t> hist(buckets, 0);
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
#pragma omp parallel
  {
    std::vector<std::uint64_t> local(buckets, 0);
#pragma omp for schedule(dynamic, 16) nowait
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j) ++local[bucket(deltas, pair_statistic(x.row(i).data(), x.row(j).data(), d))];
#pragma omp critical
    for (std::size_t b = 0; b < buckets; ++b) hist[b] += local[b];
  }
  return suffix_counts(hist);
}

std::vector<std::uint64_t> count_separable_sampled(const RowMatrix& x, std::span<const double> deltas,
                                                   PairSample sample) {
  check_sorted(deltas);
  require(x.rows() >= 2, "need at least two vectors");
  const std::size_t buckets = deltas.size() + 1;
  std::vector<std::uint64_t> hist(buckets, 0);
  const auto chunks = static_cast<std::int64_t>((sample.count + kPairChunk - 1) / kPairChunk);
#pragma omp parallel
  {
    std::vector<std::uint64_t> local(buckets, 0);
#pragma omp for schedule(dynamic, 1) nowait
    for (std::int64_t c = 0; c < chunks; ++c)
      sampled_chunk(x, deltas, sample, static_cast<std::uint64_t>(c), local);
#pragma omp critical
    for (std::size_t b = 0; b < buckets; ++b) hist[b] += local[b];
  }
  return suffix_counts(hist);
}

Vector mean(const RowMatrix& x) {
  const Eigen::Index blocks = block_count(x);
  std::vector<Vector> partial(static_cast<std::size_t>(blocks));
#pragma omp parallel for schedule(static)
  for (Eigen::Index b = 0; b < blocks; ++b)
    partial[static_cast<std::size_t>(b)] = block_sum(x, b * kReductionBlock);
  Vector s = Vector::Zero(x.cols());
  for (const Vector& p : partial) s += p;
  return s / static_cast<double>(x.rows());
}

Matrix covariance(const RowMatrix& x, const Vector& centre) {
  const Eigen::Index blocks = block_count(x);
  std::vector<Matrix> partial(static_cast<std::size_t>(blocks));
#pragma omp parallel for schedule(static)
  for (Eigen::Index b = 0; b < blocks; ++b)
    partial[static_cast<std::size_t>(b)] = block_outer(x, centre, b * kReductionBlock);
  Matrix s = Matrix::Zero(x.cols(), x.cols());
  for (const Matrix& p : partial) s += p;
  return s / static_cast<double>(x.rows());
}

std::vector<std::uint8_t> cap_hits(const RowMatrix& x, const Vector& tau, const Vector& c, double theta) {
  const Vector axis = tau - c;
  std::vector<std::uint8_t> hits(static_cast<std::size_t>(x.rows()), 0);
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    hits[static_cast<std::size_t>(i)] = in_cap(x.row(i).data(), tau, axis, theta);
  return hits;
}

}  // namespace parallel

}  // namespace stealth::kernels
