#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>

#include "ssem/kernels.hpp"

using namespace ssem;

namespace {

Tensor random_tensor(const Shape& shape, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(shape);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

struct ConvCase {
  Shape input;
  std::size_t out_channels;
};

// 0: first cnn2 layer at desk scale, 1: second cnn2 layer, 2: wider layer.
const ConvCase kConv[] = {{{10, 16, 16, 1}, 4}, {{5, 8, 8, 4}, 8}, {{10, 32, 32, 8}, 16}};

struct ConvInputs {
  Tensor x, w, b, gy;
  ConvInputs(const ConvCase& c, bool backward) : x(random_tensor(c.input, 1)), w(random_tensor({3, 3, 3, c.input[3], c.out_channels}, 2)),
        b(random_tensor({c.out_channels}, 3)) {
    if (backward) gy = random_tensor(kernels::conv3d_forward(x, w, b, {1, 1, 1}, Padding::same).shape(), 4);
  }
};

void set_threads(benchmark::State& state) {
  omp_set_num_threads(static_cast<int>(state.range(1)));
  state.counters["threads"] = static_cast<double>(state.range(1));
}

void BM_ConvForwardKernels(benchmark::State& state) {
  set_threads(state);
  const ConvInputs in(kConv[state.range(0)], false);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv3d_forward(in.x, in.w, in.b, {1, 1, 1}, Padding::same));
}

void BM_ConvForwardReference(benchmark::State& state) {
  const ConvInputs in(kConv[state.range(0)], false);
  for (auto _ : state) benchmark::DoNotOptimize(reference::conv3d_forward(in.x, in.w, in.b, {1, 1, 1}, Padding::same));
}

void BM_ConvBackwardKernels(benchmark::State& state) {
  set_threads(state);
  const ConvInputs in(kConv[state.range(0)], true);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv3d_backward(in.x, in.w, in.gy, {1, 1, 1}, Padding::same));
}

void BM_ConvBackwardReference(benchmark::State& state) {
  const ConvInputs in(kConv[state.range(0)], true);
  for (auto _ : state) benchmark::DoNotOptimize(reference::conv3d_backward(in.x, in.w, in.gy, {1, 1, 1}, Padding::same));
}

void BM_PoolKernels(benchmark::State& state) {
  set_threads(state);
  const Tensor x = random_tensor({10, 32, 32, 16}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::maxpool3d_forward(x, {2, 2, 2}, {2, 2, 2}, Padding::valid));
}

void BM_PoolReference(benchmark::State& state) {
  const Tensor x = random_tensor({10, 32, 32, 16}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(reference::maxpool3d_forward(x, {2, 2, 2}, {2, 2, 2}, Padding::valid));
}

void BM_DenseKernels(benchmark::State& state) {
  set_threads(state);
  const Tensor x = random_tensor({4, 8, 16}, 6), w = random_tensor({512, 128}, 7), b = random_tensor({128}, 8);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::dense_forward(x, w, b));
}

void BM_DenseReference(benchmark::State& state) {
  const Tensor x = random_tensor({4, 8, 16}, 6), w = random_tensor({512, 128}, 7), b = random_tensor({128}, 8);
  for (auto _ : state) benchmark::DoNotOptimize(reference::dense_forward(x, w, b));
}

void thread_args(benchmark::internal::Benchmark* b, int cases) {
  const int max_threads = omp_get_max_threads();
  for (int c = 0; c < cases; ++c) {
    for (int t = 1; t <= max_threads; t *= 2) b->Args({c, t});
  }
}

}  // namespace

BENCHMARK(BM_ConvForwardKernels)->Apply([](auto* b) { thread_args(b, 3); })->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvForwardReference)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvBackwardKernels)->Apply([](auto* b) { thread_args(b, 3); })->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvBackwardReference)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_PoolKernels)->Apply([](auto* b) { thread_args(b, 1); })->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_PoolReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_DenseKernels)->Apply([](auto* b) { thread_args(b, 1); })->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_DenseReference)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
