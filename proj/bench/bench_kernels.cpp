// Serial vs OpenMP drivers on encoder-sized problems. Set OMP_NUM_THREADS to
// compare thread counts; on a single core the two should be within noise.
#include <benchmark/benchmark.h>

#include <vector>

#include "protoscale/kernels.hpp"
#include "protoscale/rng.hpp"

namespace k = protoscale::kernels;

namespace {

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
  protoscale::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return v;
}

template <auto Gemm>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_buffer(n * n, 1), b = random_buffer(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Gemm(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}

// first conv of a 64px encoder at batch 8
const k::ConvGeometry kConv{8, 16, 32, 32, 3, 3, 1, 1};

template <auto Im2col>
void BM_im2col(benchmark::State& state) {
  const auto input = random_buffer(kConv.batch * kConv.in_channels * kConv.height * kConv.width, 3);
  std::vector<double> cols(kConv.col_rows() * kConv.col_cols());
  for (auto _ : state) {
    Im2col(kConv, input.data(), cols.data());
    benchmark::DoNotOptimize(cols.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<k::serial::gemm_nn>)->Name("gemm_nn/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_gemm<k::parallel::gemm_nn>)->Name("gemm_nn/parallel")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_gemm<k::serial::gemm_nt>)->Name("gemm_nt/serial")->Arg(128);
BENCHMARK(BM_gemm<k::parallel::gemm_nt>)->Name("gemm_nt/parallel")->Arg(128);
BENCHMARK(BM_gemm<k::serial::gemm_tn>)->Name("gemm_tn/serial")->Arg(128);
BENCHMARK(BM_gemm<k::parallel::gemm_tn>)->Name("gemm_tn/parallel")->Arg(128);
BENCHMARK(BM_im2col<k::serial::im2col>)->Name("im2col/serial");
BENCHMARK(BM_im2col<k::parallel::im2col>)->Name("im2col/parallel");

BENCHMARK_MAIN();
