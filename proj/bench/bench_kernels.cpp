// Serial reference kernels against the parallel im2col/GEMM path.
// Run with OMP_NUM_THREADS to vary the thread count.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "multipod/kernels.hpp"

namespace k = multipod::kernels;

namespace {

std::vector<float> random_buffer(std::size_t n) {
  std::mt19937_64 rng(n);
  std::normal_distribution<float> d;
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <void (*Gemm)(const k::GemmArgs<float>&)>
void bm_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_buffer(n * n), b = random_buffer(n * n);
  std::vector<float> c(n * n);
  const k::GemmArgs<float> args{false, false, n, n, n, a.data(), n, b.data(), n, 0.0f, c.data(), n};
  for (auto _ : state) {
    Gemm(args);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * double(n * n * n), benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

// CIFAR-sized 3x3 layers: (batch, channels = filters, spatial).
k::ConvGeometry conv_geometry(const benchmark::State& state) {
  k::ConvGeometry g;
  g.batch = static_cast<std::size_t>(state.range(0));
  g.channels = g.filters = static_cast<std::size_t>(state.range(1));
  g.height = g.width = static_cast<std::size_t>(state.range(2));
  g.kernel_h = g.kernel_w = 3;
  g.padding = 1;
  return g;
}

template <void (*Conv)(const k::ConvGeometry&, std::span<const float>, std::span<const float>, std::span<float>)>
void bm_conv_forward(benchmark::State& state) {
  const auto g = conv_geometry(state);
  const auto x = random_buffer(g.input_size()), w = random_buffer(g.weight_size());
  std::vector<float> y(g.output_size());
  for (auto _ : state) {
    Conv(g, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * double(g.output_size() * g.channels * 9), benchmark::Counter::kIsIterationInvariantRate,
                         benchmark::Counter::kIs1000);
}

template <void (*Conv)(const k::ConvGeometry&, std::span<const float>, std::span<const float>, std::span<float>)>
void bm_conv_backward_weight(benchmark::State& state) {
  const auto g = conv_geometry(state);
  const auto x = random_buffer(g.input_size()), dy = random_buffer(g.output_size());
  std::vector<float> dw(g.weight_size());
  for (auto _ : state) {
    Conv(g, x, dy, dw);
    benchmark::DoNotOptimize(dw.data());
  }
}

void conv_shapes(benchmark::internal::Benchmark* b) {
  b->Args({16, 16, 32})->Args({16, 32, 16})->Args({16, 64, 8});
}

}  // namespace

BENCHMARK(bm_gemm<k::serial::gemm<float>>)->Name("gemm/serial")->Arg(128)->Arg(256);
BENCHMARK(bm_gemm<k::parallel::gemm<float>>)->Name("gemm/parallel")->Arg(128)->Arg(256)->Arg(512);
BENCHMARK(bm_conv_forward<k::serial::conv2d_forward<float>>)->Name("conv_forward/serial")->Apply(conv_shapes);
BENCHMARK(bm_conv_forward<k::parallel::conv2d_forward<float>>)->Name("conv_forward/parallel")->Apply(conv_shapes);
BENCHMARK(bm_conv_backward_weight<k::serial::conv2d_backward_weight<float>>)
    ->Name("conv_backward_weight/serial")
    ->Apply(conv_shapes);
BENCHMARK(bm_conv_backward_weight<k::parallel::conv2d_backward_weight<float>>)
    ->Name("conv_backward_weight/parallel")
    ->Apply(conv_shapes);

BENCHMARK_MAIN();
