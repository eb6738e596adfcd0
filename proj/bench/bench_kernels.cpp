#include "stealth/kernels.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace stealth;

RowMatrix sphere_cloud(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  RowMatrix x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) x(i, k) = normal(rng);
    x.row(i).normalize();
  }
  return x;
}

const std::vector<double> kDeltas = {-0.02, 0.0};

void BM_PairsSerial(benchmark::State& state) {
  const RowMatrix x = sphere_cloud(state.range(0), 32, 1);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::count_separable_pairs(x, kDeltas));
  state.SetItemsProcessed(state.iterations() * state.range(0) * (state.range(0) - 1));
}

void BM_PairsParallel(benchmark::State& state) {
  const RowMatrix x = sphere_cloud(state.range(0), 32, 1);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::parallel::count_separable_pairs(x, kDeltas));
  state.SetItemsProcessed(state.iterations() * state.range(0) * (state.range(0) - 1));
}

void BM_SampledSerial(benchmark::State& state) {
  const RowMatrix x = sphere_cloud(5000, 32, 2);
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::serial::count_separable_sampled(x, kDeltas, {7, static_cast<std::uint64_t>(state.range(0))}));
}

void BM_SampledParallel(benchmark::State& state) {
  const RowMatrix x = sphere_cloud(5000, 32, 2);
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::parallel::count_separable_sampled(x, kDeltas, {7, static_cast<std::uint64_t>(state.range(0))}));
}

void BM_CovarianceSerial(benchmark::State& state) {
  const RowMatrix x = sphere_cloud(state.range(0), 32, 3);
  const Vector mu = kernels::serial::mean(x);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::covariance(x, mu));
}

void BM_CovarianceParallel(benchmark::State& state) {
  const RowMatrix x = sphere_cloud(state.range(0), 32, 3);
  const Vector mu = kernels::parallel::mean(x);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::parallel::covariance(x, mu));
}

void BM_CapHitsSerial(benchmark::State& state) {
  const RowMatrix x = sphere_cloud(state.range(0), 32, 4);
  const Vector tau = x.row(0).transpose();
  const Vector c = Vector::Zero(32);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::cap_hits(x, tau, c, 0.005));
}

void BM_CapHitsParallel(benchmark::State& state) {
  const RowMatrix x = sphere_cloud(state.range(0), 32, 4);
  const Vector tau = x.row(0).transpose();
  const Vector c = Vector::Zero(32);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::parallel::cap_hits(x, tau, c, 0.005));
}

}  // namespace

BENCHMARK(BM_PairsSerial)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PairsParallel)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SampledSerial)->Arg(1 << 20)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SampledParallel)->Arg(1 << 20)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CovarianceSerial)->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CovarianceParallel)->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CapHitsSerial)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CapHitsParallel)->Arg(100000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
