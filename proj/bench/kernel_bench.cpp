// Reference vs OpenMP kernels at the shapes the 64x64 networks actually use.
//
//   ./kernel_bench --benchmark_filter=conv

#include <benchmark/benchmark.h>

#include <vector>

#include "rls/kernels.hpp"
#include "rls/rng.hpp"

namespace k = rls::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  rls::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Encoder stages at batch 16: 1->16 @64, 16->32 @32, 32->64 @16, 5x5, stride 2.
k::ConvGeometry stage(int i) {
  static const std::size_t in[] = {1, 16, 32}, out[] = {16, 32, 64}, hw[] = {64, 32, 16};
  k::ConvGeometry g;
  g.batch = 16;
  g.in_channels = in[i];
  g.out_channels = out[i];
  g.height = g.width = hw[i];
  g.kernel_h = g.kernel_w = 5;
  g.stride = 2;
  g.pad = 2;
  return g;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::gemm(n, n, n, a, b, c, false);
    else
      k::reference::gemm(n, n, n, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const auto g = stage(static_cast<int>(state.range(0)));
  const auto x = random_vector(g.input_size(), 3), w = random_vector(g.kernel_size(), 4);
  const auto bias = random_vector(g.out_channels, 5);
  std::vector<double> y(g.output_size());
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::conv2d_forward(g, x, w, bias, y);
    else
      k::reference::conv2d_forward(g, x, w, bias, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  const auto g = stage(static_cast<int>(state.range(0)));
  const auto x = random_vector(g.input_size(), 3), w = random_vector(g.kernel_size(), 4);
  const auto gy = random_vector(g.output_size(), 6);
  std::vector<double> gx(g.input_size()), gw(g.kernel_size()), gb(g.out_channels);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::conv2d_backward_input(g, w, gy, gx);
      k::parallel::conv2d_backward_params(g, x, gy, gw, gb);
    } else {
      k::reference::conv2d_backward_input(g, w, gy, gx);
      k::reference::conv2d_backward_params(g, x, gy, gw, gb);
    }
    benchmark::DoNotOptimize(gx.data());
    benchmark::DoNotOptimize(gw.data());
  }
}

// Encoder head: 16 rows of 4096 trunk features onto 288 latent units.
template <bool Parallel>
void BM_Affine(benchmark::State& state) {
  constexpr std::size_t rows = 16, in = 4096, out = 288;
  const auto x = random_vector(rows * in, 7), w = random_vector(in * out, 8), b = random_vector(out, 9);
  const auto gy = random_vector(rows * out, 10);
  std::vector<double> y(rows * out), gx(rows * in), gw(in * out), gb(out);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::affine_forward(rows, in, out, x, w, b, y);
      k::parallel::affine_backward(rows, in, out, x, w, gy, gx, gw, gb);
    } else {
      k::reference::affine_forward(rows, in, out, x, w, b, y);
      k::reference::affine_backward(rows, in, out, x, w, gy, gx, gw, gb);
    }
    benchmark::DoNotOptimize(y.data());
    benchmark::DoNotOptimize(gw.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/reference")->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/reference")->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Affine<false>)->Name("affine/reference")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Affine<true>)->Name("affine/parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
