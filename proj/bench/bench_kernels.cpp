// OpenMP kernels against the serial references on CAR-UNet-sized layers.
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <vector>

#include "carunet/kernels.hpp"
#include "carunet/rng.hpp"

namespace {

using namespace carunet;

std::vector<Real> random_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Real> v(n);
  for (Real& x : v) x = static_cast<Real>(rng.uniform(-1, 1));
  return v;
}

// Args: channels, spatial size. 3x3 same-padding conv, channels -> channels.
ConvGeometry conv3x3(const benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  return ConvGeometry{1, c, s, s, c, 3, 3, 1, 1};
}

template <auto Kernel>
void conv_forward(benchmark::State& state) {
  const ConvGeometry g = conv3x3(state);
  const auto x = random_values(g.input_size(), 1), w = random_values(g.weight_size(), 2);
  const auto b = random_values(g.out_channels, 3);
  std::vector<Real> y(g.output_size());
  for (auto _ : state) {
    Kernel(g, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(g.output_size() * g.in_channels * 9));
}

template <auto Kernel>
void conv_weight_grad(benchmark::State& state) {
  const ConvGeometry g = conv3x3(state);
  const auto x = random_values(g.input_size(), 1), dy = random_values(g.output_size(), 2);
  std::vector<Real> dw(g.weight_size()), db(g.out_channels);
  for (auto _ : state) {
    Kernel(g, x, dy, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(g.output_size() * g.in_channels * 9));
}

// 2x2 / stride 2 transposed conv, 2c -> c channels, doubling the spatial size.
ConvGeometry up2x2(const benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  return ConvGeometry{1, c, 2 * s, 2 * s, 2 * c, 2, 2, 2, 0};
}

void conv_transpose_kernel(benchmark::State& state) {
  const ConvGeometry g = up2x2(state);
  const auto x = random_values(g.output_size(), 1), w = random_values(g.weight_size(), 2);
  const auto b = random_values(g.in_channels, 3);
  std::vector<Real> y(g.input_size());
  for (auto _ : state) {
    kernels::conv2d_backward_input(g, w, x, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void conv_transpose_reference(benchmark::State& state) {
  const ConvGeometry g = up2x2(state);
  const auto x = random_values(g.output_size(), 1), w = random_values(g.weight_size(), 2);
  const auto b = random_values(g.in_channels, 3);
  std::vector<Real> y(g.input_size());
  for (auto _ : state) {
    reference::conv_transpose2d_forward(g, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto Kernel>
void maxpool(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  const auto x = random_values(c * s * s, 1);
  std::vector<Real> y(c * s * s / 4);
  std::vector<std::size_t> arg(y.size());
  for (auto _ : state) {
    Kernel(c, s, s, x, y, arg);
    benchmark::DoNotOptimize(y.data());
  }
}

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({16, 128})->Args({32, 64})->Args({64, 32})->Unit(benchmark::kMillisecond)->UseRealTime();
}

BENCHMARK(conv_forward<kernels::conv2d_forward>)->Name("conv2d_forward/kernel")->Apply(shapes);
BENCHMARK(conv_forward<reference::conv2d_forward>)->Name("conv2d_forward/reference")->Apply(shapes);
BENCHMARK(conv_weight_grad<kernels::conv2d_backward_weight>)->Name("conv2d_weight_grad/kernel")->Apply(shapes);
BENCHMARK(conv_weight_grad<reference::conv2d_backward_weight>)->Name("conv2d_weight_grad/reference")->Apply(shapes);
BENCHMARK(conv_transpose_kernel)->Name("conv_transpose2d/kernel")->Apply(shapes);
BENCHMARK(conv_transpose_reference)->Name("conv_transpose2d/reference")->Apply(shapes);
BENCHMARK(maxpool<kernels::maxpool2x2_forward>)->Name("maxpool2x2/kernel")->Apply(shapes);
BENCHMARK(maxpool<reference::maxpool2x2_forward>)->Name("maxpool2x2/reference")->Apply(shapes);

}  // namespace

BENCHMARK_MAIN();
