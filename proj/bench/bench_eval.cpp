// Kernel timings: OpenMP kernels, the same kernels on one thread, and the
// cell-by-cell reference evaluator.

#include <map>

#include <benchmark/benchmark.h>

#include "alphamine/eval.hpp"
#include "alphamine/synthetic.hpp"

using namespace alphamine;

namespace {

const char* kExprs[] = {
    "TS_CORR($close, $volume, 20)",
    "RANK(DIV(SUB($close, TS_MIN($low, 10)), TS_STD($close, 20)))",
    "ZSCORE(EMA(DELTA(LOG($volume), 1), 10))",
};

const Panel& panel(std::size_t symbols) {
    static std::map<std::size_t, Panel> cache;
    auto it = cache.find(symbols);
    if (it == cache.end()) {
        SyntheticSpec spec;
        spec.symbols = symbols;
        spec.days = 500;
        it = cache.emplace(symbols, make_synthetic_panel(spec)).first;
    }
    return it->second;
}

void BM_parallel(benchmark::State& state) {
    const FactorExpr e = parse(kExprs[state.range(0)]);
    const Panel& p = panel(static_cast<std::size_t>(state.range(1)));
    for (auto _ : state) benchmark::DoNotOptimize(evaluate(e, p, {true}));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(p.n_symbols() * p.n_dates()));
}

void BM_serial(benchmark::State& state) {
    const FactorExpr e = parse(kExprs[state.range(0)]);
    const Panel& p = panel(static_cast<std::size_t>(state.range(1)));
    for (auto _ : state) benchmark::DoNotOptimize(evaluate(e, p, {false}));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(p.n_symbols() * p.n_dates()));
}

void BM_reference(benchmark::State& state) {
    const FactorExpr e = parse(kExprs[state.range(0)]);
    const Panel& p = panel(static_cast<std::size_t>(state.range(1)));
    for (auto _ : state) benchmark::DoNotOptimize(reference::evaluate(e, p));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(p.n_symbols() * p.n_dates()));
}

void args(benchmark::internal::Benchmark* b) {
    for (int e = 0; e < 3; ++e) b->Args({e, 100})->Args({e, 500});
    b->Unit(benchmark::kMillisecond);
}

// The reference is O(window) per cell and too slow for the wide panel.
void reference_args(benchmark::internal::Benchmark* b) {
    for (int e = 0; e < 3; ++e) b->Args({e, 100});
    b->Unit(benchmark::kMillisecond);
}

} // namespace

BENCHMARK(BM_parallel)->Apply(args);
BENCHMARK(BM_serial)->Apply(args);
BENCHMARK(BM_reference)->Apply(reference_args);

BENCHMARK_MAIN();
