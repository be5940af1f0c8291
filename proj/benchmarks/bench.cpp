#include <benchmark/benchmark.h>

#include "vqseg/analysis.hpp"
#include "vqseg/quantiser.hpp"
#include "vqseg/rng.hpp"
#include "vqseg/segnet.hpp"
#include "vqseg/tensor.hpp"

using namespace vqseg;

namespace {

std::vector<float> random_floats(Rng& rng, size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

void bm_conv2d_forward(benchmark::State& state) {
    const int c = (int)state.range(0), hw = (int)state.range(1);
    Rng rng(1);
    Tensor x = Tensor::from_data({8, c, hw, hw}, random_floats(rng, (size_t)8 * c * hw * hw));
    Tensor k = Tensor::from_data({c, c, 3, 3}, random_floats(rng, (size_t)c * c * 9, -0.2, 0.2));
    for (auto _ : state) {
        Tensor y = conv2d(x, k, 1, 1);
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetItemsProcessed(state.iterations() * 8 * (int64_t)c * c * hw * hw * 9);
}

void bm_conv2d_backward(benchmark::State& state) {
    const int c = (int)state.range(0), hw = (int)state.range(1);
    Rng rng(2);
    std::vector<float> xv = random_floats(rng, (size_t)8 * c * hw * hw);
    std::vector<float> kv = random_floats(rng, (size_t)c * c * 9, -0.2, 0.2);
    for (auto _ : state) {
        Tensor x = Tensor::from_data({8, c, hw, hw}, xv, true);
        Tensor k = Tensor::from_data({c, c, 3, 3}, kv, true);
        Tensor loss = sum(conv2d(x, k, 1, 1));
        backward(loss);
        benchmark::DoNotOptimize(k.grad().data());
    }
}

void bm_nearest_assign(benchmark::State& state) {
    const int K = (int)state.range(0), M = 4096, D = 32;
    Rng rng(3);
    Codebook cb = codebook_init(K, D, 7, false);
    std::vector<float> rows = random_floats(rng, (size_t)M * D);
    for (auto _ : state) {
        auto idx = nearest_assign(rows, M, D, cb);
        benchmark::DoNotOptimize(idx.data());
    }
    state.SetItemsProcessed(state.iterations() * (int64_t)M * K * D);
}

void bm_compute_r(benchmark::State& state) {
    const int K = (int)state.range(0);
    Codebook cb = codebook_init(K, 256, 9, false);
    for (auto _ : state) {
        CodebookStats s = compute_r(cb);
        benchmark::DoNotOptimize(s.r_mean);
    }
}

void bm_forward_pass(benchmark::State& state) {
    ModelConfig mc;
    mc.seed = 4;
    Model m = build_model(mc);
    Rng rng(5);
    Tensor x = Tensor::from_data({1, 1, 64, 64}, random_floats(rng, 64 * 64, 0.0, 1.0));
    for (auto _ : state) {
        ForwardOutput out = forward(m, x);
        benchmark::DoNotOptimize(out.logits.data().data());
    }
}

void bm_group_norm(benchmark::State& state) {
    Rng rng(6);
    const int c = 32, hw = 16;
    Tensor x = Tensor::from_data({8, c, hw, hw}, random_floats(rng, (size_t)8 * c * hw * hw));
    Tensor g = Tensor::full({c}, 1.0f);
    Tensor b = Tensor::zeros({c});
    for (auto _ : state) {
        Tensor y = group_norm(x, 4, g, b, 1e-5f);
        benchmark::DoNotOptimize(y.data().data());
    }
}

}  // namespace

BENCHMARK(bm_conv2d_forward)->Args({8, 32})->Args({32, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(bm_conv2d_backward)->Args({8, 32})->Args({32, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(bm_nearest_assign)->Arg(8)->Arg(64)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_compute_r)->Arg(8)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_forward_pass)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_group_norm)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
