// OpenMP kernels against their serial references
#include "qasian/extraction.hpp"
#include "qasian/inversion.hpp"
#include "qasian/oracle.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace qasian;

static void BM_MonteCarlo(benchmark::State& st) {
    MarketParams p;
    const bool par = st.range(0) != 0;
    for (auto _ : st) {
        PriceQuote q = par ? monte_carlo_price(p, 1.0, 20000, 64, 7) : monte_carlo_price_serial(p, 1.0, 20000, 64, 7);
        benchmark::DoNotOptimize(q.value);
    }
}
BENCHMARK(BM_MonteCarlo)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_QPE(benchmark::State& st) {
    RVec ev = RVec::LinSpaced(512, 0.01, 1.0);
    QPEConfig cfg = make_qpe_config(1024, 100.0);
    const bool par = st.range(0) != 0;
    for (auto _ : st) {
        QPEResult r = par ? qpe_invert(ev, cfg) : qpe_invert_serial(ev, cfg);
        benchmark::DoNotOptimize(r.inv_estimates.data());
    }
}
BENCHMARK(BM_QPE)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_WindowSum(benchmark::State& st) {
    const int n = 20;
    std::mt19937_64 g(3);
    std::normal_distribution<double> z;
    CVec a(1LL << n);
    for (auto& v : a) v = cplx(z(g), z(g));
    StateVector s(a / a.norm(), {{"q", 0, n}});
    const Register& r = s.reg("q");
    const bool par = st.range(0) != 0;
    for (auto _ : st) {
        double v = par ? block_probability(s, r, 12345, 1LL << 19) : block_probability_serial(s, r, 12345, 1LL << 19);
        benchmark::DoNotOptimize(v);
    }
}
BENCHMARK(BM_WindowSum)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_KronSolve(benchmark::State& st) {
    MarketParams p;
    GridSpec g = grid_from_counts(p, static_cast<int>(st.range(0)), 8, 0.01);
    OperatorSet o = build_operators(g, p, TimeClosure::extrapolated);
    CMat L = o.space_operator();
    for (auto _ : st) {
        SolveResult r = solve_kron(o.time_operator(), L, o.rhs_hat);
        benchmark::DoNotOptimize(r.x.data());
    }
}
BENCHMARK(BM_KronSolve)->Arg(5)->Arg(7)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
