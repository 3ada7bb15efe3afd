#include <benchmark/benchmark.h>

#include "nnc/dataset.hpp"
#include "nnc/reference_model.hpp"
#include "nnc/rng.hpp"
#include "nnc/runtime.hpp"

using namespace nnc;

namespace {

Blob random_blob(int n, int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Blob b(n, c, h, w);
  for (double& v : b.v) v = rng.normal();
  return b;
}

void BM_conv_forward(benchmark::State& state) {
  Rng rng(41);
  const int s = static_cast<int>(state.range(0));
  Tensor kernel({3, 3, s, 2 * s});
  for (double& v : kernel.values()) v = rng.normal();
  std::vector<double> bias(2 * s, 0.1);
  const Blob x = random_blob(8, s, 16, 16, 43);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ops::conv_forward(x, kernel, bias, 1, 1));
  }
  state.SetItemsProcessed(state.iterations() * x.n);
}
BENCHMARK(BM_conv_forward)->Arg(8)->Arg(16)->Arg(32);

void BM_reference_forward(benchmark::State& state) {
  const ModelGraph model = build_reference_cnn(47, 5, 16);
  const Blob x = random_blob(16, 1, 16, 16, 53);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(model, x));
  }
  state.SetItemsProcessed(state.iterations() * x.n);
}
BENCHMARK(BM_reference_forward);

void BM_training_step(benchmark::State& state) {
  ModelGraph model = build_reference_cnn(59, 5, 16);
  Batch batch;
  batch.inputs = random_blob(16, 1, 16, 16, 61);
  batch.labels.resize(16);
  for (int i = 0; i < 16; ++i) batch.labels[i] = i % 5;
  for (auto _ : state) {
    benchmark::DoNotOptimize(compute_gradients(model, batch));
  }
  state.SetItemsProcessed(state.iterations() * batch.size());
}
BENCHMARK(BM_training_step);

}  // namespace

BENCHMARK_MAIN();
