// dense-kernel microbenchmarks: gemm variants at the shapes the models actually hit
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "kernels.hpp"

namespace {

std::vector<float> randn(size_t n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> d(0.f, 1.f);
    std::vector<float> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

void bm_gemm_nn(benchmark::State& state) {
    const int64_t m = state.range(0), k = state.range(1), n = state.range(2);
    auto a = randn(size_t(m * k), 1), b = randn(size_t(k * n), 2);
    std::vector<float> c(size_t(m * n));
    for (auto _ : state) {
        edslm::kernels::gemm_nn(a.data(), b.data(), c.data(), m, k, n, false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(int64_t(state.iterations()) * 2 * m * k * n);
}

void bm_gemm_nt(benchmark::State& state) {
    const int64_t m = state.range(0), k = state.range(1), n = state.range(2);
    auto a = randn(size_t(m * k), 3), b = randn(size_t(n * k), 4);
    std::vector<float> c(size_t(m * n));
    for (auto _ : state) {
        edslm::kernels::gemm_nt(a.data(), b.data(), c.data(), m, k, n, false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(int64_t(state.iterations()) * 2 * m * k * n);
}

}  // namespace

// token-level projection (1 x d x d), block projection, attention score block
BENCHMARK(bm_gemm_nn)->Args({1, 256, 256})->Args({64, 256, 256})->Args({128, 256, 1024});
BENCHMARK(bm_gemm_nt)->Args({64, 32, 64})->Args({1, 256, 512});

BENCHMARK_MAIN();
