// Serial reference kernels versus their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>

#include "ovda/kernels.hpp"

namespace {

using ovda::Tensor;

Tensor random_tensor(const ovda::Shape& shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    Tensor t(shape);
    for (float& v : t.data()) v = normal(rng);
    return t;
}

struct BandProblem {
    Tensor q, kb, kp, vb, vp;
    std::size_t band;
};

BandProblem make_problem(std::size_t tokens, std::size_t frames, std::size_t band) {
    const std::size_t C = 32;
    return {random_tensor({tokens, frames, C}, 1), random_tensor({tokens, frames, C}, 2), random_tensor({band, C}, 3),
            random_tensor({tokens, frames, C}, 4), random_tensor({band, C}, 5), band};
}

template <bool Parallel>
void BM_BandForward(benchmark::State& state) {
    const auto p = make_problem(static_cast<std::size_t>(state.range(0)), 32, static_cast<std::size_t>(state.range(1)));
    for (auto _ : state) {
        auto r = Parallel ? ovda::kernels::parallel::band_attention(p.q, p.kb, p.kp, p.vb, p.vp, p.band, 0.2f)
                          : ovda::kernels::serial::band_attention(p.q, p.kb, p.kp, p.vb, p.vp, p.band, 0.2f);
        benchmark::DoNotOptimize(r.out.data().data());
    }
    state.counters["threads"] = ovda::kernels::max_threads();
}

template <bool Parallel>
void BM_BandBackward(benchmark::State& state) {
    const auto p = make_problem(static_cast<std::size_t>(state.range(0)), 32, static_cast<std::size_t>(state.range(1)));
    const auto fwd = ovda::kernels::serial::band_attention(p.q, p.kb, p.kp, p.vb, p.vp, p.band, 0.2f);
    const Tensor g = random_tensor(fwd.out.shape(), 6);
    for (auto _ : state) {
        auto r = Parallel ? ovda::kernels::parallel::band_attention_backward(g, p.q, p.kb, p.kp, p.vb, p.vp, fwd.probs,
                                                                             p.band, 0.2f)
                          : ovda::kernels::serial::band_attention_backward(g, p.q, p.kb, p.kp, p.vb, p.vp, fwd.probs,
                                                                           p.band, 0.2f);
        benchmark::DoNotOptimize(r.d_query.data().data());
    }
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor a = random_tensor({n, 64}, 7), b = random_tensor({64, 64}, 8);
    for (auto _ : state) {
        auto r = Parallel ? ovda::kernels::parallel::matmul(a, b) : ovda::kernels::serial::matmul(a, b);
        benchmark::DoNotOptimize(r.data().data());
    }
}

}  // namespace

BENCHMARK(BM_BandForward<false>)->Args({64, 8})->Args({256, 16});
BENCHMARK(BM_BandForward<true>)->Args({64, 8})->Args({256, 16});
BENCHMARK(BM_BandBackward<false>)->Args({64, 8})->Args({256, 16});
BENCHMARK(BM_BandBackward<true>)->Args({64, 8})->Args({256, 16});
BENCHMARK(BM_Matmul<false>)->Arg(256)->Arg(2048);
BENCHMARK(BM_Matmul<true>)->Arg(256)->Arg(2048);

BENCHMARK_MAIN();
