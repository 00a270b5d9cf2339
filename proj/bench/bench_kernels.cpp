#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mmfusion/kernels.hpp"

namespace {

using mmf::kernels::Trans;

std::vector<double> random_buffer(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

// Square-ish shapes matching the attention projections (T x d) * (d x d).
void BM_GemmSerial(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const auto a = random_buffer(t * d, 1), b = random_buffer(d * d, 2);
  std::vector<double> c(t * d);
  for (auto _ : state) {
    mmf::kernels::gemm_serial(Trans::No, Trans::No, t, d, d, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * t * d * d));
}

void BM_GemmParallel(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const auto a = random_buffer(t * d, 1), b = random_buffer(d * d, 2);
  std::vector<double> c(t * d);
  for (auto _ : state) {
    mmf::kernels::gemm_parallel(Trans::No, Trans::No, t, d, d, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * t * d * d));
}

void BM_SoftmaxSerial(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_buffer(n * n, 3);
  std::vector<double> y(n * n);
  for (auto _ : state) {
    mmf::kernels::softmax_rows_serial(n, n, x.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_SoftmaxParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_buffer(n * n, 3);
  std::vector<double> y(n * n);
  for (auto _ : state) {
    mmf::kernels::softmax_rows_parallel(n, n, x.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_GemmSerial)->Args({89, 76})->Args({89, 304})->Args({89, 750});
BENCHMARK(BM_GemmParallel)->Args({89, 76})->Args({89, 304})->Args({89, 750});
BENCHMARK(BM_SoftmaxSerial)->Arg(89)->Arg(512);
BENCHMARK(BM_SoftmaxParallel)->Arg(89)->Arg(512);

BENCHMARK_MAIN();
