#include <benchmark/benchmark.h>

#include "nnc/rng.hpp"
#include "nnc/tensor.hpp"

using namespace nnc;

namespace {

Tensor random_kernel(int d, int s, int t) {
  Rng rng(17);
  Tensor k({d, d, s, t});
  for (double& v : k.values()) v = rng.normal();
  return k;
}

void BM_matricize_mode3(benchmark::State& state) {
  const Tensor kernel = random_kernel(3, static_cast<int>(state.range(0)),
                                      static_cast<int>(state.range(0)) * 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matricize(kernel, 3));
  }
}
BENCHMARK(BM_matricize_mode3)->Arg(16)->Arg(32)->Arg(64);

void BM_fold_roundtrip(benchmark::State& state) {
  const Tensor kernel = random_kernel(3, 32, 64);
  const Matrix unfolded = matricize(kernel, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(fold(unfolded, 4, kernel.shape()));
  }
}
BENCHMARK(BM_fold_roundtrip);

void BM_mode_product(benchmark::State& state) {
  const int s = static_cast<int>(state.range(0));
  const Tensor kernel = random_kernel(3, s, s * 2);
  Rng rng(19);
  Matrix m(s / 2, s);
  for (double& v : m.values()) v = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(mode_product(kernel, m, 3));
  }
}
BENCHMARK(BM_mode_product)->Arg(16)->Arg(32)->Arg(64);

void BM_kronecker(benchmark::State& state) {
  Rng rng(23);
  const int n = static_cast<int>(state.range(0));
  Matrix a(n, n), b(n, n);
  for (double& v : a.values()) v = rng.normal();
  for (double& v : b.values()) v = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(kronecker(a, b));
  }
}
BENCHMARK(BM_kronecker)->Arg(8)->Arg(16);

}  // namespace

BENCHMARK_MAIN();
