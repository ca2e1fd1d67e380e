#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "pottsmg/kernels.hpp"

using namespace pmg::kernels;

namespace {

std::vector<double> random_values(size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

void BM_ConvReference(benchmark::State& st) {
  const int side = static_cast<int>(st.range(0));
  const int r = static_cast<int>(st.range(1));
  const Grid g{side, side};
  const auto in = random_values(g.size(), 1);
  const auto w = random_values(kernel_taps(r), 2);
  std::vector<double> out(g.size());
  for (auto _ : st) {
    std::fill(out.begin(), out.end(), 0.0);
    reference::conv2d(in, g, w, r, out);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(st.iterations() * g.size() * kernel_taps(r));
}

void BM_ConvTapMajor(benchmark::State& st) {
  const int side = static_cast<int>(st.range(0));
  const int r = static_cast<int>(st.range(1));
  const Grid g{side, side};
  const auto in = random_values(g.size(), 1);
  const auto w = random_values(kernel_taps(r), 2);
  std::vector<double> out(g.size());
  for (auto _ : st) {
    std::fill(out.begin(), out.end(), 0.0);
    conv2d_accumulate(in, g, w, r, out);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(st.iterations() * g.size() * kernel_taps(r));
}

void BM_ConvBatchSerial(benchmark::State& st) {
  const int batch = static_cast<int>(st.range(0));
  const Grid g{32, 32};
  const int r = 2;
  const auto in = random_values(static_cast<size_t>(batch) * g.size(), 1);
  const auto w = random_values(kernel_taps(r), 2);
  std::vector<double> out(in.size());
  for (auto _ : st) {
    std::fill(out.begin(), out.end(), 0.0);
    reference::conv2d_batch(in, batch, g, w, r, out);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(st.iterations() * batch * g.size() * kernel_taps(r));
}

void BM_ConvBatchOpenMP(benchmark::State& st) {
  const int batch = static_cast<int>(st.range(0));
  const Grid g{32, 32};
  const int r = 2;
  const auto in = random_values(static_cast<size_t>(batch) * g.size(), 1);
  const auto w = random_values(kernel_taps(r), 2);
  std::vector<double> out(in.size());
  for (auto _ : st) {
    std::fill(out.begin(), out.end(), 0.0);
    conv2d_accumulate_batch(in, batch, g, w, r, out);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(st.iterations() * batch * g.size() * kernel_taps(r));
}

}  // namespace

BENCHMARK(BM_ConvReference)->Args({32, 1})->Args({32, 2})->Args({128, 2});
BENCHMARK(BM_ConvTapMajor)->Args({32, 1})->Args({32, 2})->Args({128, 2});
BENCHMARK(BM_ConvBatchSerial)->Arg(16)->Arg(64);
BENCHMARK(BM_ConvBatchOpenMP)->Arg(16)->Arg(64);

BENCHMARK_MAIN();
