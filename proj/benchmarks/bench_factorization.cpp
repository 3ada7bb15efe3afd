#include <benchmark/benchmark.h>

#include "nnc/factorization.hpp"
#include "nnc/rank_selection.hpp"
#include "nnc/rng.hpp"
#include "nnc/tensor.hpp"

using namespace nnc;

namespace {

Matrix random_matrix(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal();
  return m;
}

void BM_truncated_svd(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Matrix a = random_matrix(n, n, 29);
  for (auto _ : state) {
    benchmark::DoNotOptimize(truncated_svd(a, n / 4));
  }
}
BENCHMARK(BM_truncated_svd)->Arg(16)->Arg(32)->Arg(64)->Arg(128);

void BM_hosvd_conv_kernel(benchmark::State& state) {
  const int s = static_cast<int>(state.range(0));
  Rng rng(31);
  Tensor kernel({3, 3, s, 2 * s});
  for (double& v : kernel.values()) v = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(hosvd(kernel, {{3, s / 2}, {4, s}}));
  }
}
BENCHMARK(BM_hosvd_conv_kernel)->Arg(16)->Arg(32)->Arg(64);

void BM_vbmf_rank(benchmark::State& state) {
  const Matrix a = random_matrix(100, 80, 37);
  for (auto _ : state) {
    benchmark::DoNotOptimize(vbmf_extreme_rank(a));
  }
}
BENCHMARK(BM_vbmf_rank);

}  // namespace

BENCHMARK_MAIN();
