// Serial reference vs OpenMP kernels on decoder-shaped operands.

#include <benchmark/benchmark.h>

#include "hybridsim/decoder.hpp"
#include "hybridsim/rng.hpp"

using namespace hybridsim;

namespace {

Matrix random_matrix(int rows, int cols, std::uint64_t seed) {
    Matrix m(rows, cols);
    SplitMix64 rng(seed);
    for (double& v : m.data) v = rng.uniform(-0.1, 0.1);
    return m;
}

void BM_MatmulSerial(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Matrix a = random_matrix(n, n, 1);
    const Matrix b = random_matrix(n, n, 2);
    for (auto _ : state) {
        Matrix c = matmul_serial(a, b);
        benchmark::DoNotOptimize(c.data.data());
    }
    state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

void BM_MatmulParallel(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Matrix a = random_matrix(n, n, 1);
    const Matrix b = random_matrix(n, n, 2);
    for (auto _ : state) {
        Matrix c = matmul(a, b);
        benchmark::DoNotOptimize(c.data.data());
    }
    state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

void BM_ForwardPrompt(benchmark::State& state) {
    ModelConfig cfg;
    cfg.num_layers = 4;
    cfg.hidden_dim = static_cast<int>(state.range(0));
    cfg.num_heads = 4;
    cfg.vocab_size = 512;
    cfg.validate();
    const DecoderWeights w = DecoderWeights::generate(cfg, 7, 128);
    std::vector<int> ids(64);
    SplitMix64 rng(3);
    for (int& id : ids) id = static_cast<int>(rng.uniform_int(0, cfg.vocab_size - 1));
    for (auto _ : state) {
        ForwardTrace t = forward_prompt(ids, w);
        benchmark::DoNotOptimize(t.output.data.data());
    }
}

}  // namespace

BENCHMARK(BM_MatmulSerial)->Arg(64)->Arg(128)->Arg(256)->Arg(512);
BENCHMARK(BM_MatmulParallel)->Arg(64)->Arg(128)->Arg(256)->Arg(512);
BENCHMARK(BM_ForwardPrompt)->Arg(64)->Arg(128);

BENCHMARK_MAIN();
