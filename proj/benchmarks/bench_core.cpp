#include <benchmark/benchmark.h>

#include <random>

#include "longrun/model.hpp"
#include "longrun/pde.hpp"
#include "longrun/riccati.hpp"
#include "longrun/simulate.hpp"

using namespace longrun;

namespace {

ModelSpec counterexample_spec() {
    WishartParams w;
    w.d = 2;
    w.K = Eigen::MatrixXd::Identity(2, 2);
    w.L = 2.0 * Eigen::MatrixXd::Identity(2, 2);
    w.Lambda = Eigen::MatrixXd::Identity(2, 2);
    MarketParams mk;
    mk.n = 1;
    mk.p = -1.0;
    mk.r0 = 0.02;
    mk.r1 = 0.1 * Eigen::MatrixXd::Identity(2, 2);
    Eigen::MatrixXd zeta(1, 2);
    zeta << 1.0, 0.0;
    mk.zeta = constant_provider(zeta);
    mk.nu = constant_provider(Eigen::MatrixXd::Constant(1, 1, 0.5));
    mk.rho = constant_provider(0.5 * Eigen::MatrixXd::Ones(2, 1));
    return ModelSpec::wishart_model(w, mk);
}

ModelSpec scalar_spec() {
    WishartParams w;
    w.d = 1;
    w.K = Eigen::MatrixXd::Constant(1, 1, -1.0);
    w.L = Eigen::MatrixXd::Constant(1, 1, 2.0);
    w.Lambda = Eigen::MatrixXd::Constant(1, 1, 1.0);
    MarketParams mk;
    mk.n = 1;
    mk.p = -1.0;
    mk.r0 = 0.02;
    mk.r1 = Eigen::MatrixXd::Constant(1, 1, 0.05);
    mk.zeta = constant_provider(Eigen::MatrixXd::Constant(1, 1, 1.0));
    mk.nu = constant_provider(Eigen::MatrixXd::Constant(1, 1, 0.5));
    mk.rho = constant_provider(Eigen::MatrixXd::Constant(1, 1, 0.4));
    return ModelSpec::wishart_model(w, mk);
}

Eigen::MatrixXd random_spd(int d, unsigned seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd m(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = normal(gen);
    return m * m.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
}

}  // namespace

static void BM_SqrtSpd(benchmark::State& state) {
    const int d = static_cast<int>(state.range(0));
    SpdMatrix x = SpdMatrix::from_dense(random_spd(d, 7));
    for (auto _ : state) {
        benchmark::DoNotOptimize(sqrt_spd(x));
    }
}
BENCHMARK(BM_SqrtSpd)->Arg(2)->Arg(4)->Arg(8);

static void BM_OperatorCoeffs(benchmark::State& state) {
    ModelSpec spec = counterexample_spec();
    SpdMatrix x = SpdMatrix::from_dense(random_spd(2, 11));
    for (auto _ : state) {
        benchmark::DoNotOptimize(eval_operator_coeffs(spec, x));
    }
}
BENCHMARK(BM_OperatorCoeffs);

static void BM_ErgodicRiccati(benchmark::State& state) {
    ModelSpec spec = scalar_spec();
    for (auto _ : state) {
        benchmark::DoNotOptimize(solve_ergodic_riccati(spec));
    }
}
BENCHMARK(BM_ErgodicRiccati);

static void BM_ApplyOperatorD2(benchmark::State& state) {
    ModelSpec spec = counterexample_spec();
    const int n = static_cast<int>(state.range(0));
    auto grid = Grid::make_d2(0.05, 6.0, n, n, n / 2);
    Eigen::VectorXd field(grid->n_nodes());
    for (int idx = 0; idx < grid->n_nodes(); ++idx) {
        field(idx) = grid->node_matrix(idx).trace();
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(apply_operator(spec, *grid, field));
    }
    state.SetItemsProcessed(state.iterations() * grid->n_nodes());
}
BENCHMARK(BM_ApplyOperatorD2)->Arg(16)->Arg(32);

static void BM_StatePath(benchmark::State& state) {
    const bool d2 = state.range(0) == 2;
    ModelSpec spec = d2 ? counterexample_spec() : scalar_spec();
    SpdMatrix x0 = SpdMatrix::identity(spec.dim());
    std::uint64_t id = 0;
    for (auto _ : state) {
        RngStream stream(99, id++);
        benchmark::DoNotOptimize(simulate_state(spec, x0, 1.0, 1e-3, stream));
    }
    state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_StatePath)->Arg(1)->Arg(2);

BENCHMARK_MAIN();
