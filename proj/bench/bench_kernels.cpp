// Serial reference vs OpenMP kernels. Thread count follows OMP_NUM_THREADS.

#include <cmath>
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "fpe/kernels.hpp"

namespace {

using namespace fpe::kernels;

std::vector<float> unit_rows(std::size_t n, std::size_t dim, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> g;
  std::vector<float> m(n * dim);
  for (std::size_t r = 0; r < n; ++r) {
    double norm = 0;
    for (std::size_t i = 0; i < dim; ++i) norm += (m[r * dim + i] = g(rng)) * m[r * dim + i];
    for (std::size_t i = 0; i < dim; ++i) m[r * dim + i] = static_cast<float>(m[r * dim + i] / std::sqrt(norm));
  }
  return m;
}

std::vector<std::uint64_t> hashes(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint64_t> h(n);
  for (auto& v : h) v = rng();
  return h;
}

constexpr std::size_t kDim = 64;

template <auto Fn>
void BM_above_threshold(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto m = unit_rows(n, kDim, 1);
  const auto q = unit_rows(1, kDim, 2);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(m, kDim, q, 0.2));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

template <auto Fn>
void BM_cosine_matrix(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto m = unit_rows(n, kDim, 3);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(m, n, kDim));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n));
}

template <auto Fn>
void BM_hamming(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = hashes(n, 4), b = hashes(n, 5);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(a, b, 5));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n));
}

BENCHMARK(BM_above_threshold<serial::above_threshold>)->Name("above_threshold/serial")->Arg(10000)->Arg(50000);
BENCHMARK(BM_above_threshold<parallel::above_threshold>)->Name("above_threshold/parallel")->Arg(10000)->Arg(50000);
BENCHMARK(BM_cosine_matrix<serial::cosine_distance_matrix>)->Name("cosine_matrix/serial")->Arg(500)->Arg(2000);
BENCHMARK(BM_cosine_matrix<parallel::cosine_distance_matrix>)->Name("cosine_matrix/parallel")->Arg(500)->Arg(2000);
BENCHMARK(BM_hamming<serial::hamming_within>)->Name("hamming/serial")->Arg(2000);
BENCHMARK(BM_hamming<parallel::hamming_within>)->Name("hamming/parallel")->Arg(2000);

}  // namespace

BENCHMARK_MAIN();
