// Serial reference vs OpenMP versions of the data-parallel kernels.

#include "gpdyn/inference_mcmc.hpp"
#include "gpdyn/kernels.hpp"
#include "gpdyn/inference_linear.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace gpdyn;

Vec random_grid(Index K, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 8.0);
    std::vector<double> t(static_cast<size_t>(K));
    for (auto& v : t) v = u(rng);
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return Eigen::Map<const Vec>(t.data(), static_cast<Index>(t.size()));
}

void BM_AssembleOmp(benchmark::State& state) {
    const Vec t = random_grid(state.range(0), 42);
    const SEKernel k(1.5, 0.4);
    for (auto _ : state) benchmark::DoNotOptimize(assemble(k, t, 1e-4, 1e-4));
}
BENCHMARK(BM_AssembleOmp)->Arg(256)->Arg(512)->Arg(1024)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_AssembleSerial(benchmark::State& state) {
    const Vec t = random_grid(state.range(0), 42);
    const SEKernel k(1.5, 0.4);
    for (auto _ : state) benchmark::DoNotOptimize(ref::assemble(k, t, 1e-4, 1e-4));
}
BENCHMARK(BM_AssembleSerial)->Arg(256)->Arg(512)->Arg(1024)->Arg(2000)->Unit(benchmark::kMillisecond);

Mat random_states(Index K, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(1.0, 0.5);
    Mat S(K, 2);
    for (Index i = 0; i < K; ++i)
        for (Index j = 0; j < 2; ++j) S(i, j) = n(rng);
    return S;
}

void BM_DesignOmp(benchmark::State& state) {
    const Mat S = random_states(state.range(0), 7);
    const Dictionary d = Dictionary::quadratic_2d();
    for (auto _ : state) benchmark::DoNotOptimize(design_matrix(d, S));
}
BENCHMARK(BM_DesignOmp)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_DesignSerial(benchmark::State& state) {
    const Mat S = random_states(state.range(0), 7);
    const Dictionary d = Dictionary::quadratic_2d();
    for (auto _ : state) benchmark::DoNotOptimize(ref::design_matrix(d, S));
}
BENCHMARK(BM_DesignSerial)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

SampleChain synthetic_chain(Index S, int P, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    SampleChain c;
    c.samples.resize(S, P);
    for (Index i = 0; i < S; ++i)
        for (int j = 0; j < P; ++j) c.samples(i, j) = n(rng);
    c.log_posterior_trace = Vec::Zero(S);
    return c;
}

void BM_FBandOmp(benchmark::State& state) {
    ShallowNet net{1, 8};
    const SampleChain c = synthetic_chain(state.range(0), net.param_count(), 3);
    const Mat q = random_states(200, 5).col(0);
    for (auto _ : state) benchmark::DoNotOptimize(posterior_f_band(c, net, q));
}
BENCHMARK(BM_FBandOmp)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

void BM_FBandSerial(benchmark::State& state) {
    ShallowNet net{1, 8};
    const SampleChain c = synthetic_chain(state.range(0), net.param_count(), 3);
    const Mat q = random_states(200, 5).col(0);
    for (auto _ : state) benchmark::DoNotOptimize(ref::posterior_f_band(c, net, q));
}
BENCHMARK(BM_FBandSerial)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
