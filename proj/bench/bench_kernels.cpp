#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "maskwright/kernels.hpp"

namespace kernels = maskwright::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const auto a = random_vector(static_cast<std::size_t>(n) * n, 1), b = random_vector(static_cast<std::size_t>(n) * n, 2);
    std::vector<double> c(static_cast<std::size_t>(n) * n);
    for (auto _ : state) {
        if constexpr (Parallel)
            kernels::matmul(a, b, c, n, n, n);
        else
            kernels::serial::matmul(a, b, c, n, n, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

kernels::ConvGeometry conv_geometry(int side) {
    kernels::ConvGeometry g;
    g.batch = 32;
    g.in_ch = 8;
    g.out_ch = 8;
    g.height = g.width = side;
    g.kh = g.kw = 3;
    g.pad_h = g.pad_w = 1;
    return g;
}

template <bool Parallel>
void BM_Conv2dForward(benchmark::State& state) {
    const auto g = conv_geometry(static_cast<int>(state.range(0)));
    const auto x = random_vector(static_cast<std::size_t>(g.batch) * g.in_ch * g.height * g.width, 3);
    const auto w = random_vector(static_cast<std::size_t>(g.out_ch) * g.in_ch * g.kh * g.kw, 4);
    std::vector<double> y(static_cast<std::size_t>(g.batch) * g.out_ch * g.out_h() * g.out_w());
    for (auto _ : state) {
        if constexpr (Parallel)
            kernels::conv2d_forward(g, x, w, y);
        else
            kernels::serial::conv2d_forward(g, x, w, y);
        benchmark::DoNotOptimize(y.data());
    }
}

template <bool Parallel>
void BM_Conv2dBackwardKernel(benchmark::State& state) {
    const auto g = conv_geometry(static_cast<int>(state.range(0)));
    const auto x = random_vector(static_cast<std::size_t>(g.batch) * g.in_ch * g.height * g.width, 5);
    const auto dy = random_vector(static_cast<std::size_t>(g.batch) * g.out_ch * g.out_h() * g.out_w(), 6);
    std::vector<double> dw(static_cast<std::size_t>(g.out_ch) * g.in_ch * g.kh * g.kw);
    for (auto _ : state) {
        if constexpr (Parallel)
            kernels::conv2d_backward_kernel(g, dy, x, dw);
        else
            kernels::serial::conv2d_backward_kernel(g, dy, x, dw);
        benchmark::DoNotOptimize(dw.data());
    }
}

}  // namespace

BENCHMARK(BM_Matmul<false>)->Name("matmul/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Matmul<true>)->Name("matmul/openmp")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Conv2dForward<false>)->Name("conv2d_forward/serial")->Arg(16)->Arg(32);
BENCHMARK(BM_Conv2dForward<true>)->Name("conv2d_forward/openmp")->Arg(16)->Arg(32);
BENCHMARK(BM_Conv2dBackwardKernel<false>)->Name("conv2d_backward_kernel/serial")->Arg(16)->Arg(32);
BENCHMARK(BM_Conv2dBackwardKernel<true>)->Name("conv2d_backward_kernel/openmp")->Arg(16)->Arg(32);

BENCHMARK_MAIN();
