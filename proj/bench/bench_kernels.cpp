// Serial reference kernels against their OpenMP counterparts.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "lit/kernels.hpp"

namespace k = lit::kernels;

namespace {

std::vector<float> random_values(std::size_t n, unsigned seed, float lo = -1, float hi = 1) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

// Token-by-channel products from the Ti/S stage 1 MLP and attention.
template <bool Parallel>
void BM_gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto kk = static_cast<std::size_t>(state.range(2));
  const bool trans_b = state.range(3) != 0;
  const auto a = random_values(m * kk, 1), b = random_values(kk * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::gemm<float>(false, trans_b, m, n, kk, a, b, c, false);
    } else {
      k::serial::gemm<float>(false, trans_b, m, n, kk, a, b, c, false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(m * n * kk), benchmark::Counter::kIsIterationInvariantRate);
}

void gemm_args(benchmark::internal::Benchmark* b) {
  b->Args({3136, 256, 64, 0})->Args({3136, 64, 256, 0})->Args({784, 784, 64, 1})->Args({196, 1536, 384, 0});
  b->Unit(benchmark::kMillisecond);
}

template <bool Parallel>
void BM_im2col(benchmark::State& state) {
  const auto g = k::ConvGeometry::make(8, 56, 56, 64, 2, 2, 0);
  const auto x = random_values(8 * 56 * 56 * 64, 3);
  std::vector<float> cols(g.rows() * g.cols());
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::im2col<float>(g, x, cols);
    } else {
      k::serial::im2col<float>(g, x, cols);
    }
    benchmark::DoNotOptimize(cols.data());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * cols.size() * sizeof(float)));
}

template <bool Parallel>
void BM_deform_im2col(benchmark::State& state) {
  const auto g = k::ConvGeometry::make(8, 56, 56, 64, 2, 2, 0);
  const auto x = random_values(8 * 56 * 56 * 64, 4);
  const auto off = random_values(g.rows() * 2 * g.taps(), 5, -2, 2);
  std::vector<float> cols(g.rows() * g.cols());
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::deform_im2col<float>(g, x, off, cols);
    } else {
      k::serial::deform_im2col<float>(g, x, off, cols);
    }
    benchmark::DoNotOptimize(cols.data());
  }
}

template <bool Parallel>
void BM_deform_col2im(benchmark::State& state) {
  const auto g = k::ConvGeometry::make(8, 56, 56, 64, 2, 2, 0);
  const auto x = random_values(8 * 56 * 56 * 64, 6);
  const auto off = random_values(g.rows() * 2 * g.taps(), 7, -2, 2);
  const auto gcols = random_values(g.rows() * g.cols(), 8);
  std::vector<float> dx(x.size()), doff(off.size());
  for (auto _ : state) {
    std::fill(dx.begin(), dx.end(), 0.0f);
    std::fill(doff.begin(), doff.end(), 0.0f);
    if constexpr (Parallel) {
      k::parallel::deform_col2im<float>(g, x, off, gcols, dx, doff);
    } else {
      k::serial::deform_col2im<float>(g, x, off, gcols, dx, doff);
    }
    benchmark::DoNotOptimize(dx.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Name("gemm/serial")->Apply(gemm_args);
BENCHMARK(BM_gemm<true>)->Name("gemm/parallel")->Apply(gemm_args);
BENCHMARK(BM_im2col<false>)->Name("im2col/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_im2col<true>)->Name("im2col/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_deform_im2col<false>)->Name("deform_im2col/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_deform_im2col<true>)->Name("deform_im2col/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_deform_col2im<false>)->Name("deform_col2im/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_deform_col2im<true>)->Name("deform_col2im/parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
