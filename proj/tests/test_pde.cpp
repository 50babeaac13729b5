#include "longrun/pde.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "longrun/riccati.hpp"
#include "test_models.hpp"

using namespace longrun;
using longrun::testing::affine_d2_spec;
using longrun::testing::example33_spec;
using longrun::testing::scalar_benchmark_spec;

namespace {

Eigen::VectorXd affine_field(const Grid& grid, const Eigen::MatrixXd& M,
                             double constant = 0.0) {
    Eigen::VectorXd v(grid.n_nodes());
    for (int idx = 0; idx < grid.n_nodes(); ++idx) {
        v(idx) = (M * grid.node_matrix(idx)).trace() + constant;
    }
    return v;
}

}  // namespace

TEST(Grid, NodesAreSpdAndIndexRoundTrips) {
    auto g2 = Grid::make_d2(0.05, 6.0, 12, 10, 8);
    for (int idx = 0; idx < g2->n_nodes(); ++idx) {
        const Eigen::MatrixXd X = g2->node_matrix(idx);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(X, Eigen::EigenvaluesOnly);
        ASSERT_GT(es.eigenvalues().minCoeff(), 0.0);
        int i, j, k;
        g2->unflatten(idx, i, j, k);
        ASSERT_EQ(g2->flatten(i, j, k), idx);
    }
    auto g1 = Grid::make_d1(1e-3, 20.0, 50);
    Eigen::MatrixXd probe(1, 1);
    probe << 1.0;
    const int near = g1->nearest_node(probe);
    EXPECT_NEAR(g1->node_matrix(near)(0, 0), 1.0, 0.15);
}

TEST(SurfaceGradients, AffineFunctionRecoveredExactlyD2) {
    // Uniform sqrt spacing makes Tr(MX) a quadratic in (s, t) and linear in
    // c, so the interior chain-rule recovery is exact.
    auto grid = Grid::make_d2(0.05, 6.0, 20, 18, 10);
    Eigen::MatrixXd M(2, 2);
    M << 0.7, -0.25, -0.25, 0.4;
    const auto grads = surface_gradients(*grid, affine_field(*grid, M));
    for (int idx = 0; idx < grid->n_nodes(); ++idx) {
        if (!grid->is_interior(idx)) continue;
        ASSERT_LE((grads[idx] - M).norm(), 1e-10) << "node " << idx;
    }
}

TEST(ApplyOperator, MatchesEvalFOnAffineFieldsD2) {
    auto grid = Grid::make_d2(0.1, 5.0, 16, 14, 10);
    ModelSpec spec = example33_spec();
    Eigen::MatrixXd M(2, 2);
    M << 0.3, 0.1, 0.1, -0.2;
    const Eigen::VectorXd field = affine_field(*grid, M, 0.7);
    const Eigen::VectorXd image = apply_operator(spec, *grid, field);
    for (int idx = 0; idx < grid->n_nodes(); ++idx) {
        if (!grid->is_interior(idx)) continue;
        const double expected =
            eval_F(spec, SpdMatrix::from_dense(grid->node_matrix(idx)),
                   SymMatrix::from_dense(M));
        ASSERT_NEAR(image(idx), expected, 1e-9 * (1.0 + std::abs(expected)))
            << "node " << idx;
    }
}

TEST(ApplyOperator, MatchesEvalFOnAffineFieldsD1) {
    // The log axis is not polynomial-exact, so the tolerance is the
    // second-order stencil error here.
    auto grid = Grid::make_d1(1e-2, 20.0, 400);
    ModelSpec spec = scalar_benchmark_spec();
    Eigen::MatrixXd M(1, 1);
    M << -0.05;
    const Eigen::VectorXd field = affine_field(*grid, M);
    const Eigen::VectorXd image = apply_operator(spec, *grid, field);
    for (int idx = 0; idx < grid->n_nodes(); ++idx) {
        if (!grid->is_interior(idx)) continue;
        const double expected =
            eval_F(spec, SpdMatrix::from_dense(grid->node_matrix(idx)),
                   SymMatrix::from_dense(M));
        ASSERT_NEAR(image(idx), expected, 2e-4 * (1.0 + std::abs(expected)));
    }
}

TEST(SolveCauchy, OneStepFromZeroIsThePotential) {
    auto grid = Grid::make_d1(1e-3, 20.0, 400);
    ModelSpec spec = scalar_benchmark_spec();
    CauchyOptions opt;
    opt.T = 1e-3;
    opt.dt = 1e-3;
    opt.precheck_master = false;
    CauchyResult res = solve_cauchy(spec, grid, opt);
    const ValueSurface& surf = res.snapshots.back();
    for (int idx = 0; idx < grid->n_nodes(); ++idx) {
        if (!grid->is_interior(idx)) continue;
        const double V =
            eval_operator_coeffs(spec, SpdMatrix::from_dense(grid->node_matrix(idx))).V;
        ASSERT_NEAR(surf.values(idx), opt.dt * V, 10.0 * opt.dt * opt.dt);
    }
}

TEST(SolveCauchy, InitialConditionExact) {
    auto grid = Grid::make_d1(1e-3, 20.0, 100);
    ModelSpec spec = scalar_benchmark_spec();
    CauchyOptions opt;
    opt.T = 0.0;
    opt.precheck_master = false;
    CauchyResult res = solve_cauchy(spec, grid, opt);
    EXPECT_EQ(res.snapshots.back().values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SolveCauchy, MatchesRiccatiOnScalarBenchmark) {
    auto grid = Grid::make_d1(1e-3, 20.0, 400);
    ModelSpec spec = scalar_benchmark_spec();
    CauchyOptions opt;
    opt.T = 2.0;
    opt.dt = 1e-3;
    opt.precheck_master = false;
    CauchyResult res = solve_cauchy(spec, grid, opt);
    HorizonRiccatiPath vpath = solve_horizon_riccati_ode(spec, 2.0, 1e-4);
    const ValueSurface& surf = res.snapshots.back();
    double worst = 0.0;
    for (int idx = 0; idx < grid->n_nodes(); ++idx) {
        if (!grid->is_interior(idx)) continue;
        const double x = grid->node_matrix(idx)(0, 0);
        const double exact = vpath.M_at(2.0)(0, 0) * x + vpath.m_at(2.0);
        worst = std::max(worst,
                         std::abs(surf.values(idx) - exact) / (1.0 + std::abs(exact)));
    }
    EXPECT_LE(worst, 1e-3);
}

TEST(SolveCauchy, PotentialShiftMovesSurfaceLinearly) {
    // Replacing V by V - c shifts the solution by exactly -c t: the only
    // zeroth-order dependence of the operator is additive through V.
    auto grid = Grid::make_d1(1e-2, 10.0, 120);
    ModelSpec spec = scalar_benchmark_spec();
    ModelSpec shifted = spec;
    const double c = 0.37;
    shifted.market.r0 = spec.market.r0 + c / spec.market.p * (-1.0);  // V -> V - c
    CauchyOptions opt;
    opt.T = 0.05;
    opt.dt = 1e-3;
    opt.precheck_master = false;
    CauchyResult base = solve_cauchy(spec, grid, opt);
    CauchyResult moved = solve_cauchy(shifted, grid, opt);
    const Eigen::VectorXd diff =
        moved.snapshots.back().values - base.snapshots.back().values;
    for (int idx = 0; idx < grid->n_nodes(); ++idx) {
        ASSERT_NEAR(diff(idx), -c * opt.T, 1e-10);
    }
}

TEST(SolveCauchy, PrecheckRejectsBoundaryLevelSpec) {
    ModelSpec spec = example33_spec();
    std::get<WishartParams>(spec.state).L =
        std::sqrt(3.0) * Eigen::MatrixXd::Identity(2, 2);
    auto grid = Grid::make_d2(0.1, 4.0, 10, 10, 8);
    CauchyOptions opt;
    opt.T = 0.01;
    opt.dt = 1e-3;
    EXPECT_THROW(solve_cauchy(spec, grid, opt), std::invalid_argument);
    opt.override_precheck = true;  // warn-only override
    CauchyResult res = solve_cauchy(spec, grid, opt);
    EXPECT_FALSE(res.master_check_passed);
}

TEST(ExtractErgodic, SyntheticSurfaceRecoveredExactly) {
    auto grid = Grid::make_d1(1e-2, 10.0, 60);
    const double lambda = -0.21;
    Eigen::VectorXd w(grid->n_nodes());
    for (int idx = 0; idx < grid->n_nodes(); ++idx) {
        w(idx) = std::sin(0.3 * grid->node_matrix(idx)(0, 0));
    }
    ValueSurface s1{grid, 7.0, (lambda * 7.0) + w.array()};
    ValueSurface s2{grid, 9.0, (lambda * 9.0) + w.array()};
    const int ref = grid->nearest_node(Eigen::MatrixXd::Constant(1, 1, 1.0));
    ErgodicPairEstimate est = extract_ergodic(s1, s2, ref);
    EXPECT_NEAR(est.lambda, lambda, 1e-13);
    for (int idx = 0; idx < grid->n_nodes(); ++idx) {
        ASSERT_NEAR(est.vhat(idx), w(idx) - w(ref), 1e-12);
    }
}

TEST(ExtractErgodic, BenchmarkLambdaWithinTolerance) {
    auto grid = Grid::make_d1(1e-3, 20.0, 400);
    ModelSpec spec = scalar_benchmark_spec();
    CauchyOptions opt;
    opt.T = 20.0;
    opt.dt = 1e-3;
    opt.snapshot_times = {19.0};
    opt.precheck_master = false;
    CauchyResult res = solve_cauchy(spec, grid, opt);
    const int ref = grid->nearest_node(Eigen::MatrixXd::Constant(1, 1, 1.0));
    ErgodicPairEstimate est =
        extract_ergodic(res.snapshots[0], res.snapshots[1], ref);
    RiccatiSolution sol = solve_ergodic_riccati(spec);
    EXPECT_NEAR(est.lambda, sol.lambda_hat, 1e-3);
}

TEST(ComputeH, SyntheticStationarySurfaceGivesZeros) {
    auto grid = Grid::make_d1(1e-2, 10.0, 80);
    ModelSpec spec = scalar_benchmark_spec();
    const double lambda = -0.2;
    Eigen::VectorXd w(grid->n_nodes());
    for (int idx = 0; idx < grid->n_nodes(); ++idx) {
        w(idx) = 0.1 * grid->node_matrix(idx)(0, 0);
    }
    std::vector<ValueSurface> surfaces;
    for (double T : {3.0, 6.0}) {
        surfaces.push_back(ValueSurface{grid, T, (lambda * T) + w.array()});
    }
    const int ref = grid->nearest_node(Eigen::MatrixXd::Constant(1, 1, 1.0));
    ErgodicPairEstimate est = extract_ergodic(surfaces[0], surfaces[1], ref);
    DiagnosticBox box;
    auto rows = compute_h(spec, surfaces, est, box);
    for (const auto& row : rows) {
        EXPECT_NEAR(row.h_oscillation, 0.0, 1e-12);
        EXPECT_NEAR(row.grad_h_sup, 0.0, 1e-12);
        EXPECT_NEAR(row.policy_distance, 0.0, 1e-12);
    }
}

TEST(SolveCauchyD2, AffineSpecMatchesRiccatiOde) {
    ModelSpec spec = affine_d2_spec();
    auto grid = Grid::make_d2(0.05, 6.0, 28, 28, 12);
    CauchyOptions opt;
    opt.T = 1.0;
    opt.dt = 2e-3;
    opt.precheck_master = false;
    CauchyResult res = solve_cauchy(spec, grid, opt);
    HorizonRiccatiPath vpath = solve_horizon_riccati_ode(spec, 1.0, 1e-4);
    const ValueSurface& surf = res.snapshots.back();
    DiagnosticBox box;
    box.x_lo = box.z_lo = 0.5;
    box.x_hi = box.z_hi = 4.0;
    box.c_abs = 0.6;
    double worst = 0.0;
    for (int idx = 0; idx < grid->n_nodes(); ++idx) {
        const Eigen::MatrixXd X = grid->node_matrix(idx);
        const double s = std::sqrt(X(0, 0)), t = std::sqrt(X(1, 1));
        const double c = X(0, 1) / (s * t);
        if (X(0, 0) < box.x_lo || X(0, 0) > box.x_hi || X(1, 1) < box.z_lo ||
            X(1, 1) > box.z_hi || std::abs(c) > box.c_abs) {
            continue;
        }
        const double exact = (vpath.M_at(1.0) * X).trace() + vpath.m_at(1.0);
        worst = std::max(worst,
                         std::abs(surf.values(idx) - exact) / (1.0 + std::abs(exact)));
    }
    EXPECT_LE(worst, 5e-3);
}

TEST(SolveCauchyD2, CounterExampleCurvatureWitness) {
    // The counter-example value surface genuinely curves in c; the affine
    // d = 2 spec only through discretization noise.
    auto grid = Grid::make_d2(0.05, 6.0, 24, 24, 12);
    DiagnosticBox box;
    box.x_lo = box.z_lo = 0.3;
    box.x_hi = box.z_hi = 4.0;
    box.c_abs = 0.6;
    CauchyOptions opt;
    opt.T = 4.0;
    opt.dt = 2e-3;
    opt.snapshot_times = {3.0};
    opt.precheck_master = false;

    CauchyResult counter = solve_cauchy(example33_spec(), grid, opt);
    CauchyResult affine = solve_cauchy(affine_d2_spec(), grid, opt);
    const int ref = grid->nearest_node(Eigen::MatrixXd::Identity(2, 2));
    ErgodicPairEstimate counter_pair =
        extract_ergodic(counter.snapshots[0], counter.snapshots[1], ref);
    ErgodicPairEstimate affine_pair =
        extract_ergodic(affine.snapshots[0], affine.snapshots[1], ref);

    const double counter_curv = max_c_curvature(*grid, counter_pair.vhat, box);
    const double affine_curv = max_c_curvature(*grid, affine_pair.vhat, box);
    EXPECT_GE(counter_curv, 10.0 * affine_curv)
        << "counter " << counter_curv << " vs affine floor " << affine_curv;
}

TEST(SurfaceGradMap, InterpolatesAndCountsExcursions) {
    auto grid = Grid::make_d2(0.05, 6.0, 16, 16, 10);
    Eigen::MatrixXd M(2, 2);
    M << 0.4, 0.12, 0.12, -0.3;
    auto excursions = std::make_shared<std::atomic<long>>(0);
    GradMap map = make_surface_grad_map(grid, affine_field(*grid, M), excursions);

    Eigen::MatrixXd X(2, 2);
    X << 1.3, 0.21, 0.21, 2.4;  // interior point off the nodes
    EXPECT_LE((map(0.0, X) - M).norm(), 5e-2);
    EXPECT_EQ(excursions->load(), 0);

    Eigen::MatrixXd outside(2, 2);
    outside << 40.0, 0.0, 0.0, 40.0;
    map(0.0, outside);
    EXPECT_EQ(excursions->load(), 1);
}
