#include "longrun/model.hpp"

#include <gtest/gtest.h>

#include <random>

#include "test_models.hpp"

using namespace longrun;
using longrun::testing::affine_d2_spec;
using longrun::testing::example33_spec;
using longrun::testing::random_gaussian;
using longrun::testing::random_spd_dense;
using longrun::testing::scalar_benchmark_spec;

namespace {

// ---------------------------------------------------------------------------
// Closed-form oracles for the constant-coefficient Wishart model. These are
// written directly from the explicit entrywise formulas and stay independent
// of the generic tensor assembly they check.
// ---------------------------------------------------------------------------

struct WishartClosedForm {
    Eigen::MatrixXd K, L, Lambda, zeta, r1;
    Eigen::VectorXd nu, rho;
    double p, q, r0;

    static WishartClosedForm from_spec(const ModelSpec& spec) {
        WishartClosedForm cf;
        const auto* w = spec.wishart();
        cf.K = w->K;
        cf.L = w->L;
        cf.Lambda = w->Lambda;
        const Eigen::MatrixXd any = Eigen::MatrixXd::Identity(w->d, w->d);
        cf.zeta = spec.market.zeta(any);
        cf.nu = spec.market.nu(any);
        cf.rho = spec.market.rho(any);
        cf.r1 = spec.market.r1;
        cf.p = spec.market.p;
        cf.q = spec.market.q;
        cf.r0 = spec.market.r0;
        return cf;
    }

    Eigen::MatrixXd bbar(const Eigen::MatrixXd& x) const {
        Eigen::MatrixXd base = L * L.transpose() + K * x + x * K.transpose();
        Eigen::MatrixXd corr =
            x * zeta.transpose() * nu * rho.transpose() * Lambda.transpose();
        return base - q * (corr + corr.transpose());
    }

    double A_entry(const Eigen::MatrixXd& x, int i, int j, int k, int l) const {
        const Eigen::MatrixXd LL = Lambda * Lambda.transpose();
        return x(i, k) * LL(j, l) + x(i, l) * LL(j, k) + x(j, k) * LL(i, l) +
               x(j, l) * LL(i, k);
    }

    double Abar_entry(const Eigen::MatrixXd& x, const Eigen::MatrixXd& S, int i,
                      int j, int k, int l) const {
        const Eigen::MatrixXd P = Lambda * rho * rho.transpose() * Lambda.transpose();
        return A_entry(x, i, j, k, l) -
               q * (S(i, k) * P(j, l) + S(i, l) * P(j, k) + S(j, k) * P(i, l) +
                    S(j, l) * P(i, k));
    }

    double V(const Eigen::MatrixXd& x) const {
        const Eigen::MatrixXd rr = r1 + r1.transpose();
        const Eigen::MatrixXd znz = zeta.transpose() * nu * nu.transpose() * zeta;
        return p * r0 + 0.5 * p * (x * rr).trace() - 0.5 * q * (x * znz).trace();
    }
};

// Five-coefficient expansion of the operator on affine candidates in the
// (d, n) = (2, 1) geometry with zeta = (zeta1, 0): the value decomposes over
// the monomials x, y, z, y^2/x plus a constant.
struct AffineExpansion {
    double cx, cy, cz, cy2x, c0;

    double eval(const Eigen::MatrixXd& X) const {
        const double x = X(0, 0), y = X(0, 1), z = X(1, 1);
        return cx * x + cy * y + cz * z + cy2x * y * y / x + c0;
    }
};

AffineExpansion affine_expansion_oracle(const ModelSpec& spec,
                                        const Eigen::MatrixXd& M) {
    const WishartClosedForm cf = WishartClosedForm::from_spec(spec);
    const Eigen::MatrixXd A_cl =
        cf.K - cf.q * cf.Lambda * cf.rho * cf.nu.transpose() * cf.zeta;
    const Eigen::MatrixXd znz =
        cf.zeta.transpose() * cf.nu * cf.nu.transpose() * cf.zeta;
    const Eigen::MatrixXd quad =
        2.0 * M * cf.Lambda * cf.Lambda.transpose() * M +
        A_cl.transpose() * M + M * A_cl +
        0.5 * (cf.p * (cf.r1 + cf.r1.transpose()) - cf.q * znz);
    const Eigen::VectorXd v = M * cf.Lambda * cf.rho;
    AffineExpansion e;
    e.cx = quad(0, 0) - 2.0 * cf.q * v(0) * v(0);
    e.cy = 2.0 * quad(0, 1) - 4.0 * cf.q * v(0) * v(1);
    e.cz = quad(1, 1);
    e.cy2x = -2.0 * cf.q * v(1) * v(1);
    e.c0 = (cf.L * cf.L.transpose() * M).trace() + cf.p * cf.r0;
    return e;
}

double contract_form(const Eigen::MatrixXd& form_full, const Eigen::MatrixXd& theta) {
    const int d = static_cast<int>(theta.rows());
    Eigen::VectorXd flat(d * d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) flat(pair_index(i, j, d)) = theta(i, j);
    return flat.dot(form_full * flat);
}

ModelSpec degenerate_general_spec(int d) {
    GeneralStateCoeffs gen;
    gen.d = d;
    gen.b = constant_provider(Eigen::MatrixXd::Identity(d, d));
    gen.F = constant_provider(Eigen::MatrixXd::Zero(d, d));
    gen.G = constant_provider(Eigen::MatrixXd::Zero(d, d));
    MarketParams mk;
    mk.n = 1;
    mk.m = d;
    mk.p = -1.0;
    mk.r0 = 0.0;
    mk.r1 = Eigen::MatrixXd::Zero(d, d);
    mk.zeta = constant_provider(Eigen::MatrixXd::Ones(1, d));
    mk.nu = constant_provider(Eigen::MatrixXd::Zero(1, 1));
    mk.rho = constant_provider(Eigen::MatrixXd::Zero(d, 1));
    return ModelSpec::general_model(gen, mk);
}

}  // namespace

TEST(StateCoeffs, WishartClosedFormAtIdentity) {
    WishartParams w;
    w.d = 2;
    w.K = Eigen::MatrixXd::Identity(2, 2);
    w.L = 2.0 * Eigen::MatrixXd::Identity(2, 2);
    w.Lambda = Eigen::MatrixXd::Identity(2, 2);
    MarketParams mk;
    mk.n = 1;
    mk.p = -1.0;
    mk.r1 = Eigen::MatrixXd::Zero(2, 2);
    mk.zeta = constant_provider(Eigen::MatrixXd::Ones(1, 2));
    ModelSpec spec = ModelSpec::wishart_model(w, mk);

    StateCoeffs c = eval_state_coeffs(spec, SpdMatrix::identity(2));
    EXPECT_NEAR((c.b - 6.0 * Eigen::MatrixXd::Identity(2, 2)).norm(), 0.0, 1e-14);
    EXPECT_NEAR((c.f - Eigen::MatrixXd::Identity(2, 2)).norm(), 0.0, 1e-14);
    EXPECT_NEAR((c.g - Eigen::MatrixXd::Identity(2, 2)).norm(), 0.0, 1e-14);
}

TEST(StateCoeffs, TensorSymmetryInIj) {
    std::mt19937_64 gen(42);
    ModelSpec spec = example33_spec();
    SpdMatrix x = SpdMatrix::from_dense(random_spd_dense(2, gen));
    StateCoeffs c = eval_state_coeffs(spec, x);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            EXPECT_NEAR((c.a[i][j] - c.a[j][i]).norm(), 0.0, 0.0);
}

TEST(StateCoeffs, ZeroDiffusionGivesZeroTensor) {
    ModelSpec spec = degenerate_general_spec(2);
    StateCoeffs c = eval_state_coeffs(spec, SpdMatrix::identity(2));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) EXPECT_EQ(c.a[i][j].norm(), 0.0);
}

TEST(HDelta, DriftOnlyAndWishartClosedForm) {
    ModelSpec degenerate = degenerate_general_spec(2);
    EXPECT_NEAR(eval_H_delta(degenerate, SpdMatrix::identity(2), 0.0), 2.0, 1e-14);

    // Wishart closed form H_0 = Tr((LL' - (d+1) Lambda Lambda') x^-1) + 2 Tr K.
    WishartParams w;
    w.d = 2;
    w.K = Eigen::MatrixXd::Identity(2, 2);
    w.L = 2.0 * Eigen::MatrixXd::Identity(2, 2);
    w.Lambda = Eigen::MatrixXd::Identity(2, 2);
    MarketParams mk;
    mk.n = 1;
    mk.p = -1.0;
    mk.r1 = Eigen::MatrixXd::Zero(2, 2);
    mk.zeta = constant_provider(Eigen::MatrixXd::Ones(1, 2));
    ModelSpec spec = ModelSpec::wishart_model(w, mk);
    EXPECT_NEAR(eval_H_delta(spec, SpdMatrix::identity(2), 0.0), 6.0, 1e-13);
}

TEST(HDelta, MonotoneDecreasingInDelta) {
    std::mt19937_64 gen(7);
    ModelSpec spec = example33_spec();
    for (int rep = 0; rep < 20; ++rep) {
        SpdMatrix x = SpdMatrix::from_dense(random_spd_dense(2, gen));
        const double h0 = eval_H_delta(spec, x, 0.0);
        const double h1 = eval_H_delta(spec, x, 0.5);
        const double h2 = eval_H_delta(spec, x, 2.0);
        EXPECT_GE(h0, h1);
        EXPECT_GE(h1, h2);
    }
}

TEST(Market, ScalarCase) {
    ModelSpec spec = scalar_benchmark_spec();
    SpdMatrix x = SpdMatrix::from_dense(Eigen::MatrixXd::Constant(1, 1, 2.25));
    MarketCoeffs mc = eval_market(spec, x);
    EXPECT_NEAR(mc.sigma(0, 0), 1.5, 1e-14);
    EXPECT_NEAR(mc.Sigma(0, 0), 2.25, 1e-14);
    EXPECT_NEAR(mc.Theta(0, 0), 1.0, 1e-14);
    // rho = 0 so D = identity.
    EXPECT_NEAR((mc.D - Eigen::MatrixXd::Identity(1, 1)).norm(), 0.0, 1e-14);
}

TEST(Market, CounterExampleThetaSandwich) {
    // sqrt(X) Theta(X) sqrt(X) = [[x, y], [y, y^2/x]] in the d > n geometry.
    ModelSpec spec = example33_spec();
    Eigen::MatrixXd X(2, 2);
    X << 2.0, 1.0, 1.0, 1.0;
    SpdMatrix x = SpdMatrix::from_dense(X);
    MarketCoeffs mc = eval_market(spec, x);
    Eigen::MatrixXd sq = sqrt_spd(x).dense();
    Eigen::MatrixXd sandwich = sq * mc.Theta * sq;
    Eigen::MatrixXd expected(2, 2);
    expected << 2.0, 1.0, 1.0, 0.5;
    EXPECT_NEAR((sandwich - expected).norm(), 0.0, 1e-12);
}

TEST(Market, ThetaIdempotentAndSigmaInvariant) {
    std::mt19937_64 gen(5);
    for (const ModelSpec& spec : {example33_spec(), affine_d2_spec()}) {
        for (int rep = 0; rep < 10; ++rep) {
            SpdMatrix x = SpdMatrix::from_dense(random_spd_dense(2, gen));
            MarketCoeffs mc = eval_market(spec, x);
            EXPECT_LE((mc.Theta * mc.Theta - mc.Theta).norm(), 1e-12);
            EXPECT_LE((mc.sigma * mc.Theta - mc.sigma).norm(),
                      1e-12 * (1.0 + mc.sigma.norm()));
        }
    }
}

TEST(OperatorCoeffs, QZeroCollapsesBarTerms) {
    ModelSpec spec = example33_spec();
    spec.market.q = 0.0;  // direct assembly probe; p -> 0 itself is disallowed
    std::mt19937_64 gen(11);
    SpdMatrix x = SpdMatrix::from_dense(random_spd_dense(2, gen));
    OperatorCoeffs oc = eval_operator_coeffs(spec, x);
    EXPECT_NEAR((oc.Abar - oc.A).norm(), 0.0, 0.0);
    EXPECT_NEAR((oc.bbar - oc.state.b).norm(), 0.0, 0.0);
    EXPECT_NEAR(oc.V, spec.market.p * eval_rate(spec, x.dense()), 1e-14);
}

TEST(OperatorCoeffs, MatchesWishartClosedForms) {
    std::mt19937_64 gen(13);
    for (const ModelSpec& spec : {example33_spec(), affine_d2_spec()}) {
        const WishartClosedForm cf = WishartClosedForm::from_spec(spec);
        for (int rep = 0; rep < 25; ++rep) {
            SpdMatrix x = SpdMatrix::from_dense(random_spd_dense(2, gen));
            const Eigen::MatrixXd xd = x.dense();
            OperatorCoeffs oc = eval_operator_coeffs(spec, x);
            MarketCoeffs mc = eval_market(spec, x);
            const Eigen::MatrixXd sq = sqrt_spd(x).dense();
            const Eigen::MatrixXd S = sq * mc.Theta * sq;

            EXPECT_LE((oc.bbar - cf.bbar(xd)).norm(), 1e-12 * (1.0 + oc.bbar.norm()));
            EXPECT_NEAR(oc.V, cf.V(xd), 1e-12 * (1.0 + std::abs(oc.V)));
            for (int i = 0; i < 2; ++i) {
                for (int j = 0; j < 2; ++j) {
                    for (int k = 0; k < 2; ++k) {
                        for (int l = 0; l < 2; ++l) {
                            const int p1 = pair_index(i, j, 2);
                            const int p2 = pair_index(k, l, 2);
                            EXPECT_NEAR(oc.A(p1, p2), cf.A_entry(xd, i, j, k, l),
                                        1e-12 * (1.0 + std::abs(oc.A(p1, p2))));
                            EXPECT_NEAR(oc.Abar(p1, p2),
                                        cf.Abar_entry(xd, S, i, j, k, l),
                                        1e-12 * (1.0 + std::abs(oc.Abar(p1, p2))));
                        }
                    }
                }
            }
        }
    }
}

TEST(OperatorCoeffs, CounterExamplePotentialAtIdentity) {
    // Independent scalar expansion of the potential line at X = I.
    ModelSpec spec = example33_spec();
    OperatorCoeffs oc = eval_operator_coeffs(spec, SpdMatrix::identity(2));
    // p r0 + 1/2 Tr(I (p(r1+r1') - q zeta'nu nu'zeta))
    //   = -0.02 + 1/2 (-0.2 - 0.125 - 0.2) = -0.2825
    EXPECT_NEAR(oc.V, -0.2825, 1e-14);
}

TEST(OperatorCoeffs, SvecFormPositiveDefiniteInside) {
    std::mt19937_64 gen(19);
    ModelSpec spec = example33_spec();
    for (int rep = 0; rep < 10; ++rep) {
        SpdMatrix x = SpdMatrix::from_dense(random_spd_dense(2, gen));
        OperatorCoeffs oc = eval_operator_coeffs(spec, x);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(oc.A_svec,
                                                          Eigen::EigenvaluesOnly);
        EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
    }
}

TEST(EvalF, GradAndHessZeroGivesPotential) {
    std::mt19937_64 gen(23);
    ModelSpec spec = example33_spec();
    SpdMatrix x = SpdMatrix::from_dense(random_spd_dense(2, gen));
    OperatorCoeffs oc = eval_operator_coeffs(spec, x);
    EXPECT_NEAR(eval_F(spec, x, SymMatrix(2)), oc.V, 1e-14);
}

TEST(EvalF, MatchesAffineExpansionOracle) {
    std::mt19937_64 gen(29);
    ModelSpec spec = example33_spec();
    for (int rep = 0; rep < 50; ++rep) {
        SpdMatrix x = SpdMatrix::from_dense(random_spd_dense(2, gen));
        SymMatrix grad =
            SymMatrix::from_dense(longrun::testing::random_gaussian(2, 2, gen));
        AffineExpansion e = affine_expansion_oracle(spec, grad.dense());
        const double expected = e.eval(x.dense());
        const double actual = eval_F(spec, x, grad);
        EXPECT_NEAR(actual, expected, 1e-10 * (1.0 + std::abs(expected)));
    }
}

TEST(EvalPi, MyopicWhenGradientVanishes) {
    ModelSpec spec = example33_spec();
    std::mt19937_64 gen(31);
    SpdMatrix x = SpdMatrix::from_dense(random_spd_dense(2, gen));
    Eigen::VectorXd pi = eval_pi(spec, x, SymMatrix(2));
    EXPECT_EQ(pi.size(), 1);
    EXPECT_NEAR(pi(0), 0.5 / (1.0 - (-1.0)), 1e-13);  // nu / (1 - p)
}

TEST(EvalPi, BranchesCoincideAtMEqualsN) {
    // d = n = 1 with rho != 0 so the hedging term is alive.
    ModelSpec spec = longrun::testing::scalar_rho_benchmark_spec();
    std::mt19937_64 gen(37);
    std::uniform_real_distribution<double> unif(0.3, 3.0);
    for (int rep = 0; rep < 25; ++rep) {
        SpdMatrix x =
            SpdMatrix::from_dense(Eigen::MatrixXd::Constant(1, 1, unif(gen)));
        SymMatrix grad(1);
        grad.set(0, 0, unif(gen) - 1.5);
        MarketCoeffs mc = eval_market(spec, x);
        Eigen::MatrixXd eta = eval_eta(spec, x, grad);
        Eigen::VectorXd hedge = mc.C * eta * mc.rho;
        const double inv1mp = 1.0 / (1.0 - spec.market.p);
        Eigen::VectorXd branch_mgtn =
            inv1mp * (mc.nu + mc.Sigma.llt().solve(mc.sigma * hedge));
        Eigen::VectorXd branch_mlen =
            inv1mp * (mc.sigma * (mc.sigma.transpose() * mc.sigma)
                                     .llt()
                                     .solve(mc.sigma.transpose() * mc.nu + hedge));
        Eigen::VectorXd pi = eval_pi(spec, x, grad);
        EXPECT_NEAR(branch_mgtn(0), branch_mlen(0),
                    1e-13 * (1.0 + std::abs(branch_mgtn(0))));
        EXPECT_NEAR(pi(0), branch_mgtn(0), 1e-13 * (1.0 + std::abs(pi(0))));
    }
}

TEST(EvalPi, CounterExampleHandExpansion) {
    // pi = (nu + 2 rho (M1+M2) + 2 rho (y/x)(M2+M3)) / (1 - p) for the
    // (2,1) geometry with Lambda = I, zeta = (1 0), scalar tests below.
    ModelSpec spec = example33_spec();
    std::mt19937_64 gen(41);
    for (int rep = 0; rep < 20; ++rep) {
        SpdMatrix x = SpdMatrix::from_dense(random_spd_dense(2, gen));
        SymMatrix grad =
            SymMatrix::from_dense(longrun::testing::random_gaussian(2, 2, gen));
        const double M1 = grad(0, 0), M2 = grad(0, 1), M3 = grad(1, 1);
        const double xx = x.dense()(0, 0), yy = x.dense()(0, 1);
        const double rho = 0.5, nu = 0.5, p = -1.0;
        const double expected =
            (nu + 2.0 * rho * (M1 + M2) + 2.0 * rho * (yy / xx) * (M2 + M3)) /
            (1.0 - p);
        Eigen::VectorXd pi = eval_pi(spec, x, grad);
        EXPECT_NEAR(pi(0), expected, 1e-12 * (1.0 + std::abs(expected)));
    }
}

TEST(EvalEta, ZeroGradAndScalarExpansion) {
    ModelSpec spec = scalar_benchmark_spec();
    SpdMatrix x = SpdMatrix::from_dense(Eigen::MatrixXd::Constant(1, 1, 1.7));
    EXPECT_EQ(eval_eta(spec, x, SymMatrix(1)).norm(), 0.0);
    SymMatrix grad(1);
    grad.set(0, 0, -0.3);
    // d = 1: eta = 2 sqrt(x) Lambda grad
    EXPECT_NEAR(eval_eta(spec, x, grad)(0, 0), 2.0 * std::sqrt(1.7) * (-0.3), 1e-13);
}

TEST(EvalEta, NormMatchesEllipticityForm) {
    // Tr(eta' eta) = grad . A . grad, the contraction identity used by the
    // deflator drift corrections.
    std::mt19937_64 gen(43);
    ModelSpec spec = example33_spec();
    for (int rep = 0; rep < 20; ++rep) {
        SpdMatrix x = SpdMatrix::from_dense(random_spd_dense(2, gen));
        SymMatrix grad =
            SymMatrix::from_dense(longrun::testing::random_gaussian(2, 2, gen));
        const double lhs = eval_eta(spec, x, grad).squaredNorm();
        const double rhs = ellipticity_form(spec, x, grad);
        EXPECT_NEAR(lhs, rhs, 1e-12 * (1.0 + std::abs(rhs)));
    }
}

TEST(EllipticityForm, ClosedFormValues) {
    ModelSpec spec = example33_spec();
    EXPECT_EQ(ellipticity_form(spec, SpdMatrix::identity(2), SymMatrix(2)), 0.0);
    // Wishart x = I, Lambda = I, theta = I, d = 2: 4 Tr(I) = 8.
    EXPECT_NEAR(ellipticity_form(spec, SpdMatrix::identity(2), SymMatrix::identity(2)),
                8.0, 1e-13);
}

TEST(EllipticityForm, EqualsFourTraceForm) {
    std::mt19937_64 gen(47);
    ModelSpec spec = example33_spec();
    for (int rep = 0; rep < 25; ++rep) {
        SpdMatrix x = SpdMatrix::from_dense(random_spd_dense(2, gen));
        SymMatrix theta =
            SymMatrix::from_dense(longrun::testing::random_gaussian(2, 2, gen));
        StateCoeffs sc = eval_state_coeffs(spec, x);
        const double oracle =
            4.0 * (sc.f * theta.dense() * sc.g * theta.dense()).trace();
        EXPECT_NEAR(ellipticity_form(spec, x, theta), oracle,
                    1e-12 * (1.0 + std::abs(oracle)));
    }
}

TEST(Sandwich, KappaBoundsBothRegimes) {
    // kappa_low * theta.A.theta <= theta.Abar.theta <= kappa_up * theta.A.theta
    // sampled over both risk-aversion regimes.
    for (double p : {-1.0, -0.25, 0.3, 0.8}) {
        ModelSpec spec = example33_spec(p);
        std::mt19937_64 gen(53 + static_cast<unsigned>(p * 100));
        for (int rep = 0; rep < 500; ++rep) {
            SpdMatrix x = SpdMatrix::from_dense(random_spd_dense(2, gen));
            Eigen::MatrixXd theta = longrun::testing::random_gaussian(2, 2, gen);
            theta = (0.5 * (theta + theta.transpose())).eval();
            OperatorCoeffs oc = eval_operator_coeffs(spec, x);
            const double qa = contract_form(oc.A, theta);
            const double qabar = contract_form(oc.Abar, theta);
            const double slack = 1e-9 * (1.0 + qa);
            EXPECT_GE(qabar, spec.kappa_lower * qa - slack);
            EXPECT_LE(qabar, spec.kappa_upper * qa + slack);
        }
    }
}

TEST(ModelSpec, KappaConstants) {
    ModelSpec neg = example33_spec(-1.0);
    EXPECT_NEAR(neg.kappa_lower, 0.5, 1e-15);  // 1 - q with q = 1/2
    EXPECT_NEAR(neg.kappa_upper, 1.0, 1e-15);
    ModelSpec pos = example33_spec(0.5);
    EXPECT_NEAR(pos.kappa_lower, 1.0, 1e-15);
    EXPECT_NEAR(pos.kappa_upper, 2.0, 1e-15);  // 1 - q with q = -1
    EXPECT_GT(neg.kappa_lower, 0.0);
    EXPECT_LE(neg.kappa_lower, neg.kappa_upper);
}

TEST(ModelSpec, RejectsBadExponent) {
    WishartParams w;
    w.d = 1;
    w.K = w.L = w.Lambda = Eigen::MatrixXd::Identity(1, 1);
    MarketParams mk;
    mk.n = 1;
    mk.r1 = Eigen::MatrixXd::Zero(1, 1);
    mk.p = 1.5;
    EXPECT_THROW(ModelSpec::wishart_model(w, mk), std::invalid_argument);
    mk.p = 0.0;
    EXPECT_THROW(ModelSpec::wishart_model(w, mk), std::invalid_argument);
}
