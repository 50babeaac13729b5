// Acceptance suite: runs every criterion at its stated tolerance and
// prints one pass/fail line per criterion. Exits with the number of
// failing criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <vector>

#include "longrun/assumptions.hpp"
#include "longrun/pde.hpp"
#include "longrun/riccati.hpp"
#include "longrun/simulate.hpp"
#include "test_models.hpp"

using namespace longrun;
using namespace longrun::testing;

namespace {

constexpr int kThreads = 2;

struct Criterion {
    int id;
    std::string label;
    bool pass = true;
    std::string detail;
    double seconds = 0.0;
};

std::vector<Criterion> g_results;

void run_criterion(int id, const std::string& label,
                   const std::function<void(Criterion&)>& body) {
    Criterion c{id, label};
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(c);
    } catch (const std::exception& e) {
        c.pass = false;
        c.detail += std::string(" exception: ") + e.what();
    }
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%2d] %s  %-28s %s (%.1f s)\n", c.id, c.pass ? "PASS" : "FAIL",
                label.c_str(), c.detail.c_str(), c.seconds);
    std::fflush(stdout);
    g_results.push_back(c);
}

void expect(Criterion& c, bool ok, const std::string& what) {
    if (!ok) {
        c.pass = false;
        c.detail += " [" + what + "]";
    }
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// Closed-form Wishart coefficient oracle (entrywise formulas, independent
// of the generic tensor assembly).
struct WishartOracle {
    Eigen::MatrixXd K, L, Lambda, zeta, r1;
    Eigen::VectorXd nu, rho;
    double p, q, r0;

    static WishartOracle from(const ModelSpec& spec) {
        WishartOracle o;
        const auto* w = spec.wishart();
        o.K = w->K;
        o.L = w->L;
        o.Lambda = w->Lambda;
        const Eigen::MatrixXd probe = Eigen::MatrixXd::Identity(w->d, w->d);
        o.zeta = spec.market.zeta(probe);
        o.nu = spec.market.nu(probe);
        o.rho = spec.market.rho(probe);
        o.r1 = spec.market.r1;
        o.p = spec.market.p;
        o.q = spec.market.q;
        o.r0 = spec.market.r0;
        return o;
    }

    Eigen::MatrixXd bbar(const Eigen::MatrixXd& x) const {
        const Eigen::MatrixXd corr =
            x * zeta.transpose() * nu * rho.transpose() * Lambda.transpose();
        return L * L.transpose() + K * x + x * K.transpose() -
               q * (corr + corr.transpose());
    }
    double A_entry(const Eigen::MatrixXd& x, int i, int j, int k, int l) const {
        const Eigen::MatrixXd G = Lambda * Lambda.transpose();
        return x(i, k) * G(j, l) + x(i, l) * G(j, k) + x(j, k) * G(i, l) +
               x(j, l) * G(i, k);
    }
    double Abar_entry(const Eigen::MatrixXd& x, const Eigen::MatrixXd& S, int i,
                      int j, int k, int l) const {
        const Eigen::MatrixXd P = Lambda * rho * rho.transpose() * Lambda.transpose();
        return A_entry(x, i, j, k, l) -
               q * (S(i, k) * P(j, l) + S(i, l) * P(j, k) + S(j, k) * P(i, l) +
                    S(j, l) * P(i, k));
    }
    double V(const Eigen::MatrixXd& x) const {
        return p * r0 +
               0.5 * p * (x * (r1 + r1.transpose())).trace() -
               0.5 * q *
                   (x * zeta.transpose() * nu * nu.transpose() * zeta).trace();
    }
};

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2]
                        : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

// --------------------------------------------------------------------------

void criterion_1_riccati(Criterion& c) {
    ModelSpec spec = scalar_benchmark_spec();
    RiccatiSolution sol = solve_ergodic_riccati(spec);
    expect(c, std::abs(sol.Mhat(0, 0) - (-0.0533985905)) <= 1e-9,
           "Mhat = " + fmt(sol.Mhat(0, 0)));
    expect(c, std::abs(sol.lambda_hat - (-0.2335943621)) <= 1e-9,
           "lambdaHat = " + fmt(sol.lambda_hat));
    for (unsigned seed = 1; seed <= 20; ++seed) {
        ModelSpec rs = random_riccati_spec(seed);
        RiccatiSolution s = solve_ergodic_riccati(rs);
        expect(c, s.residual_norm <= 1e-10,
               "seed " + std::to_string(seed) + " residual " + fmt(s.residual_norm));
        expect(c, s.stability_margin >= 1e-8,
               "seed " + std::to_string(seed) + " sym margin " + fmt(s.stability_margin));
    }
    c.detail = "Mhat " + fmt(sol.Mhat(0, 0)) + ", lambdaHat " + fmt(sol.lambda_hat) +
               ", 20 random specs";
}

void criterion_2_pde_ode(Criterion& c) {
    ModelSpec spec = scalar_benchmark_spec();
    HorizonRiccatiPath vpath = solve_horizon_riccati_ode(spec, 10.0, 1e-4);
    auto max_err = [&](int nodes, double dt) {
        auto grid = Grid::make_d1(1e-3, 20.0, nodes);
        CauchyOptions opt;
        opt.T = 10.0;
        opt.dt = dt;
        opt.precheck_master = false;
        CauchyResult res = solve_cauchy(spec, grid, opt);
        double worst = 0.0;
        for (int idx = 0; idx < grid->n_nodes(); ++idx) {
            if (!grid->is_interior(idx)) continue;
            const double x = grid->node_matrix(idx)(0, 0);
            const double exact = vpath.M_at(10.0)(0, 0) * x + vpath.m_at(10.0);
            worst = std::max(worst, std::abs(res.snapshots.back().values(idx) - exact) /
                                        (1.0 + std::abs(exact)));
        }
        return worst;
    };
    const double coarse = max_err(400, 1e-3);
    const double fine = max_err(800, 5e-4);
    expect(c, coarse <= 1e-3, "interior rel err " + fmt(coarse));
    expect(c, coarse / fine >= 2.0, "refinement factor " + fmt(coarse / fine));
    c.detail = "err " + fmt(coarse) + ", refinement x" + fmt(coarse / fine);
}

void criterion_3_ergodic_extraction(Criterion& c) {
    ModelSpec spec = scalar_benchmark_spec();
    auto grid = Grid::make_d1(1e-3, 20.0, 400);
    CauchyOptions opt;
    opt.T = 50.0;
    opt.dt = 1e-3;
    opt.snapshot_times = {5.0, 10.0, 20.0, 40.0, 49.0};
    opt.precheck_master = false;
    CauchyResult res = solve_cauchy(spec, grid, opt);
    const int ref = grid->nearest_node(Eigen::MatrixXd::Constant(1, 1, 1.0));
    ErgodicPairEstimate ergodic =
        extract_ergodic(res.snapshots[4], res.snapshots[5], ref);  // T-1, T
    RiccatiSolution sol = solve_ergodic_riccati(spec);
    expect(c, std::abs(ergodic.lambda - sol.lambda_hat) <= 1e-3,
           "lambda gap " + fmt(std::abs(ergodic.lambda - sol.lambda_hat)));

    DiagnosticBox box;  // [0.5, 5]
    std::vector<ValueSurface> surfaces(res.snapshots.begin(), res.snapshots.begin() + 4);
    auto rows = compute_h(spec, surfaces, ergodic, box);
    for (size_t k = 1; k < rows.size(); ++k) {
        expect(c, rows[k].grad_h_sup < rows[k - 1].grad_h_sup,
               "grad_h not decreasing at T = " + fmt(rows[k].T));
    }
    expect(c, rows.back().grad_h_sup <= 1e-4,
           "final grad_h " + fmt(rows.back().grad_h_sup));
    expect(c, rows.back().policy_distance <= 1e-3,
           "final policy distance " + fmt(rows.back().policy_distance));
    c.detail = "lambda gap " + fmt(std::abs(ergodic.lambda - sol.lambda_hat)) +
               ", final grad_h " + fmt(rows.back().grad_h_sup);
}

void criterion_4_sandwich(Criterion& c) {
    long violations = 0;
    for (double p : {-1.0, 0.5}) {
        ModelSpec spec = example33_spec(p);
        std::mt19937_64 gen(2000 + static_cast<unsigned>(p * 10));
        for (int rep = 0; rep < 10000; ++rep) {
            SpdMatrix x = SpdMatrix::from_dense(random_spd_dense(2, gen));
            Eigen::MatrixXd theta = random_gaussian(2, 2, gen);
            theta = (0.5 * (theta + theta.transpose())).eval();
            OperatorCoeffs oc = eval_operator_coeffs(spec, x);
            Eigen::VectorXd flat(4);
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) flat(pair_index(i, j, 2)) = theta(i, j);
            const double qa = flat.dot(oc.A * flat);
            const double qb = flat.dot(oc.Abar * flat);
            const double slack = 1e-9 * (1.0 + qa);
            if (qb < spec.kappa_lower * qa - slack ||
                qb > spec.kappa_upper * qa + slack) {
                ++violations;
            }
        }
    }
    expect(c, violations == 0, std::to_string(violations) + " violations");
    c.detail = "2 x 10^4 draws, " + std::to_string(violations) + " violations";
}

void criterion_5_closed_forms(Criterion& c) {
    ModelSpec spec = example33_spec();
    const WishartOracle oracle = WishartOracle::from(spec);
    std::mt19937_64 gen(555);
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        SpdMatrix x = SpdMatrix::from_dense(random_spd_dense(2, gen));
        Eigen::MatrixXd M = random_gaussian(2, 2, gen);
        M = (0.5 * (M + M.transpose())).eval();
        const Eigen::MatrixXd xd = x.dense();
        OperatorCoeffs oc = eval_operator_coeffs(spec, x);
        MarketCoeffs mc = eval_market(spec, x);
        const Eigen::MatrixXd sq = sqrt_spd(x).dense();
        const Eigen::MatrixXd S = sq * mc.Theta * sq;
        worst = std::max(worst, (oc.bbar - oracle.bbar(xd)).cwiseAbs().maxCoeff());
        worst = std::max(worst, std::abs(oc.V - oracle.V(xd)));
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                for (int k = 0; k < 2; ++k)
                    for (int l = 0; l < 2; ++l) {
                        const int p1 = pair_index(i, j, 2), p2 = pair_index(k, l, 2);
                        worst = std::max(worst, std::abs(oc.A(p1, p2) -
                                                         oracle.A_entry(xd, i, j, k, l)));
                        worst = std::max(
                            worst, std::abs(oc.Abar(p1, p2) -
                                            oracle.Abar_entry(xd, S, i, j, k, l)));
                    }
        // five-coefficient expansion against the generic operator
        AffineFCoeffs e = eval_affine_F_coeffs(spec, M);
        const double generic = eval_F(spec, x, SymMatrix::from_dense(M));
        worst = std::max(worst, std::abs(e.eval(xd) - generic));
    }
    expect(c, worst <= 1e-10, "max abs deviation " + fmt(worst));
    c.detail = "10^3 draws, max abs deviation " + fmt(worst);
}

void criterion_6_counterexample(Criterion& c) {
    ModelSpec canonical = example33_spec();
    CounterexampleReport rep = counterexample_search(canonical, 64, 2024);
    // No affine candidate exists (minimum bounded away from rounding level),
    // but the stated 1e-3 threshold is not attainable: near-solutions zero
    // the x, y, z coefficients and leave only a quartically small y^2/x
    // coefficient. Asserted as stated; see the project notes for analysis.
    expect(c, rep.min_residual > 1e-3,
           "minResidual " + fmt(rep.min_residual) + " (> 1e-3 as stated)");

    ModelSpec solvable = example33_spec(-1.0, 2.0, 0.5, 0.5, 0.02, 0.0);
    CounterexampleReport rep0 = counterexample_search(solvable, 64, 2024);
    expect(c, rep0.min_residual <= 1e-12,
           "r1=0 residual " + fmt(rep0.min_residual));
    expect(c, std::abs(rep.witness_z_coeff - (-0.1)) <= 1e-12,
           "witness z " + fmt(rep.witness_z_coeff));

    auto grid = Grid::make_d2(0.05, 6.0, 48, 48, 24);
    DiagnosticBox box;
    box.x_lo = box.z_lo = 0.3;
    box.x_hi = box.z_hi = 4.0;
    box.c_abs = 0.6;
    CauchyOptions opt;
    opt.T = 12.0;
    opt.dt = 2e-3;
    opt.snapshot_times = {11.0};
    opt.precheck_master = false;
    CauchyResult counter = solve_cauchy(canonical, grid, opt);
    CauchyResult affine = solve_cauchy(affine_d2_spec(), grid, opt);
    const int refnode = grid->nearest_node(Eigen::MatrixXd::Identity(2, 2));
    ErgodicPairEstimate cpair =
        extract_ergodic(counter.snapshots[0], counter.snapshots[1], refnode);
    ErgodicPairEstimate apair =
        extract_ergodic(affine.snapshots[0], affine.snapshots[1], refnode);
    const double ccurv = max_c_curvature(*grid, cpair.vhat, box);
    const double acurv = max_c_curvature(*grid, apair.vhat, box);
    expect(c, ccurv >= 10.0 * acurv,
           "curvature " + fmt(ccurv) + " vs 10 x floor " + fmt(acurv));
    c.detail = "minResidual " + fmt(rep.min_residual) + ", r1=0 " +
               fmt(rep0.min_residual) + ", z " + fmt(rep.witness_z_coeff) +
               ", curvature " + fmt(ccurv) + " / floor " + fmt(acurv);
}

void criterion_7_path_identities(Criterion& c) {
    ModelSpec spec = scalar_rho_benchmark_spec();
    HorizonRiccatiPath vpath = solve_horizon_riccati_ode(spec, 1.0, 1e-4);
    ValueMap phi = [&](double s, const Eigen::MatrixXd& x) {
        return (vpath.M_at(s) * x).trace() + vpath.m_at(s);
    };
    GradMap grad = [&](double s, const Eigen::MatrixXd&) { return vpath.M_at(s); };
    std::vector<double> medians;
    for (double dt : {4e-3, 2e-3, 1e-3}) {
        std::vector<double> res;
        for (long i = 0; i < 100; ++i) {
            RngStream stream(404, static_cast<std::uint64_t>(i));
            PathBundle path = simulate_state(spec, SpdMatrix::identity(1), 1.0, dt, stream);
            PathIdentityResiduals r = check_path_identities(spec, path, phi, grad, 1.0);
            res.push_back(std::max(r.wealth_side, r.deflator_side));
        }
        medians.push_back(median_of(res));
    }
    const double f1 = medians[0] / medians[1];
    const double f2 = medians[1] / medians[2];
    expect(c, f1 >= 1.3, "halving factor " + fmt(f1));
    expect(c, f2 >= 1.3, "halving factor " + fmt(f2));

    // degenerate drift-only model: identities exact up to rounding
    GeneralStateCoeffs gen;
    gen.d = 1;
    gen.b = constant_provider(Eigen::MatrixXd::Constant(1, 1, 0.8));
    gen.F = constant_provider(Eigen::MatrixXd::Zero(1, 1));
    gen.G = constant_provider(Eigen::MatrixXd::Zero(1, 1));
    MarketParams mk;
    mk.n = 1;
    mk.m = 1;
    mk.p = -1.0;
    mk.r0 = 0.03;
    mk.r1 = Eigen::MatrixXd::Zero(1, 1);
    mk.zeta = constant_provider(Eigen::MatrixXd::Constant(1, 1, 1.0));
    mk.nu = constant_provider(Eigen::MatrixXd::Zero(1, 1));
    mk.rho = constant_provider(Eigen::MatrixXd::Zero(1, 1));
    mk.sigma = constant_provider(Eigen::MatrixXd::Constant(1, 1, 1.0));
    ModelSpec degenerate = ModelSpec::general_model(gen, mk);
    RngStream stream(31, 0);
    PathBundle path = simulate_state(degenerate, SpdMatrix::identity(1), 1.0, 1e-2, stream);
    ValueMap phi0 = [&](double s, const Eigen::MatrixXd&) { return -0.03 * s; };
    GradMap grad0 = [](double, const Eigen::MatrixXd&) {
        return Eigen::MatrixXd::Zero(1, 1);
    };
    PathIdentityResiduals r0 = check_path_identities(degenerate, path, phi0, grad0, 1.0);
    expect(c, std::max(r0.wealth_side, r0.deflator_side) <= 1e-12,
           "degenerate residual " + fmt(std::max(r0.wealth_side, r0.deflator_side)));
    c.detail = "medians " + fmt(medians[0]) + " / " + fmt(medians[1]) + " / " +
               fmt(medians[2]) + ", factors " + fmt(f1) + ", " + fmt(f2);
}

void criterion_8_duality(Criterion& c) {
    ModelSpec spec = scalar_benchmark_spec();
    HorizonRiccatiPath vpath = solve_horizon_riccati_ode(spec, 1.0, 1e-3);
    DualityReport rep = mc_duality(spec, SpdMatrix::identity(1), 1.0, 100000, 1e-3,
                                   9001, vpath, kThreads);
    expect(c, rep.wealth_gap_in_se <= 3.0, "wealth gap " + fmt(rep.wealth_gap_in_se) + " se");
    expect(c, rep.deflator_gap_in_se <= 3.0,
           "deflator gap " + fmt(rep.deflator_gap_in_se) + " se");
    c.detail = "gaps " + fmt(rep.wealth_gap_in_se) + " se / " +
               fmt(rep.deflator_gap_in_se) + " se around e^v = " +
               fmt(std::exp(rep.v_reference));
}

void criterion_9_longrun_mc(Criterion& c) {
    ModelSpec spec = scalar_rho_benchmark_spec();
    RiccatiSolution sol = solve_ergodic_riccati(spec);
    HorizonRiccatiPath vpath = solve_horizon_riccati_ode(spec, 20.0, 1e-3);
    auto rows = mc_longrun_convergence(spec, SpdMatrix::identity(1), 1.0,
                                       {2.0, 5.0, 10.0, 20.0}, 10000, 1e-3, 2024,
                                       vpath, sol.Mhat, kThreads);
    for (size_t k = 1; k < rows.size(); ++k) {
        expect(c, rows[k].sup_ratio_deviation.mean < rows[k - 1].sup_ratio_deviation.mean,
               "sup-ratio not decreasing at T = " + fmt(rows[k].horizon));
        expect(c, rows[k].strategy_distance.mean < rows[k - 1].strategy_distance.mean,
               "distance not decreasing at T = " + fmt(rows[k].horizon));
    }
    // terminal values pinned from the seeded run (regression constants)
    const double pinned_ratio = 7.1962063419306334e-12;
    const double pinned_dist = 3.1845948416169803e-23;
    expect(c,
           std::abs(rows.back().sup_ratio_deviation.mean - pinned_ratio) <=
               1e-9 * (1.0 + pinned_ratio),
           "terminal sup-ratio " + fmt(rows.back().sup_ratio_deviation.mean) +
               " vs pinned " + fmt(pinned_ratio));
    expect(c,
           std::abs(rows.back().strategy_distance.mean - pinned_dist) <=
               1e-9 * (1.0 + pinned_dist),
           "terminal distance " + fmt(rows.back().strategy_distance.mean) +
               " vs pinned " + fmt(pinned_dist));
    std::ostringstream oss;
    oss.precision(17);
    oss << "terminal ratio " << rows.back().sup_ratio_deviation.mean << ", distance "
        << rows.back().strategy_distance.mean;
    c.detail = oss.str();
}

void criterion_10_checker(Criterion& c) {
    CheckReport ex = check_prop_wishart(example33_spec());
    expect(c, ex.passed(), "counter-example prop check " + to_string(ex.verdict));
    expect(c, ex.details.count("route") && ex.details.at("route") == 1.0,
           "route i + ii-first-alternative");

    ModelSpec boundary = example33_spec();
    std::get<WishartParams>(boundary.state).L =
        Eigen::LLT<Eigen::MatrixXd>(3.0 * Eigen::MatrixXd::Identity(2, 2))
            .matrixL();  // LL' = (d+1) Lambda Lambda' exactly
    CheckReport strict = check_prop_wishart(boundary);
    expect(c, strict.verdict == CheckReport::Verdict::fail && strict.witness.has_value(),
           "boundary spec must fail with witness");

    // 0 < p < 1 branch: a passing and a failing spec
    WishartParams w;
    w.d = 2;
    w.K = -5.0 * Eigen::MatrixXd::Identity(2, 2);
    w.L = 2.0 * Eigen::MatrixXd::Identity(2, 2);
    w.Lambda = Eigen::MatrixXd::Identity(2, 2);
    MarketParams mk;
    mk.n = 2;
    mk.p = 0.5;
    mk.r1 = Eigen::MatrixXd::Zero(2, 2);
    mk.zeta = constant_provider(Eigen::MatrixXd::Identity(2, 2));
    mk.nu = constant_provider(Eigen::MatrixXd::Zero(2, 1));
    mk.rho = constant_provider(Eigen::MatrixXd::Zero(2, 1));
    ModelSpec pos = ModelSpec::wishart_model(w, mk);
    CheckReport pos_report = check_prop_wishart(pos);
    expect(c, pos_report.passed(), "0<p<1 passing spec rejected");
    expect(c, pos_report.details.at("rhs_p_pos_cond") == 0.0, "rhs must vanish");

    ModelSpec weak = pos;
    std::get<WishartParams>(weak.state).K = -0.01 * Eigen::MatrixXd::Identity(2, 2);
    weak.market.r1 = 2.0 * Eigen::MatrixXd::Identity(2, 2);
    CheckReport weak_report = check_prop_wishart(weak);
    expect(c, weak_report.verdict == CheckReport::Verdict::fail,
           "0<p<1 failing spec accepted");
    expect(c, weak_report.details.at("eps_squared") < weak_report.details.at("rhs_p_pos_cond"),
           "eps^2 comparison must be reported");
    c.detail = "counter-example family " + ex.summary.substr(0, 34);
}

void criterion_11_generator(Criterion& c) {
    auto trace_phi = [](const Eigen::MatrixXd& y) { return y.trace(); };
    auto sq_phi = [](const Eigen::MatrixXd& y) { return y.trace() * y.trace(); };
    struct Case {
        ModelSpec spec;
        SpdMatrix x;
        std::function<double(const Eigen::MatrixXd&)> phi;
        long paths;
        const char* name;
    };
    std::vector<Case> cases;
    cases.push_back({scalar_benchmark_spec(),
                     SpdMatrix::from_dense(Eigen::MatrixXd::Constant(1, 1, 1.3)),
                     trace_phi, 200000, "d1 linear"});
    cases.push_back({scalar_benchmark_spec(),
                     SpdMatrix::from_dense(Eigen::MatrixXd::Constant(1, 1, 1.3)),
                     sq_phi, 200000, "d1 quadratic"});
    cases.push_back({example33_spec(), SpdMatrix::identity(2), trace_phi, 50000,
                     "d2 linear"});
    cases.push_back({example33_spec(), SpdMatrix::identity(2), sq_phi, 50000,
                     "d2 quadratic"});
    std::string gaps;
    int k = 0;
    for (const auto& cs : cases) {
        GeneratorCheckReport rep = generator_check(cs.spec, cs.x, cs.phi, 0.01,
                                                   cs.paths, 5e-4, 7000 + k, kThreads);
        expect(c, rep.pass, std::string(cs.name) + " rate " + fmt(rep.mc_rate) +
                               " vs " + fmt(rep.generator_value) + " (se " +
                               fmt(rep.standard_error) + ", band " +
                               fmt(rep.bias_band) + ")");
        gaps += fmt(std::abs(rep.mc_rate - rep.generator_value)) + " ";
        ++k;
    }
    c.detail = "|rate - L phi| = " + gaps;
}

void criterion_12_deflation(Criterion& c) {
    ModelSpec spec = scalar_rho_benchmark_spec();
    RiccatiSolution sol = solve_ergodic_riccati(spec);
    const Eigen::MatrixXd mhat = sol.Mhat;
    GradMap grad = [mhat](double, const Eigen::MatrixXd&) { return mhat; };
    const ModelSpec* sp = &spec;
    PolicyMap optimal = [mhat, sp](double, const Eigen::MatrixXd& x) {
        return affine_policy(*sp, mhat, SpdMatrix::from_dense(x));
    };
    OneSidedMcReport sm = mc_supermartingale_deflation(
        spec, SpdMatrix::identity(1), 1.0, 20000, 1e-3, 4242, grad, optimal, 1.0,
        kThreads);
    expect(c, sm.pass, "deflated wealth mean " + fmt(sm.value.mean) + " vs 1 + 3 se");

    PolicyMap perturbed = [mhat, sp](double, const Eigen::MatrixXd& x) {
        Eigen::VectorXd pi = affine_policy(*sp, mhat, SpdMatrix::from_dense(x));
        pi(0) += 0.15;
        return pi;
    };
    OneSidedMcReport nm = mc_numeraire(spec, SpdMatrix::identity(1), 1.0, 20000,
                                       1e-3, 4243, mhat, perturbed, kThreads);
    expect(c, nm.pass, "numeraire mean " + fmt(nm.value.mean) + " vs 1 + 3 se");
    c.detail = "deflated " + fmt(sm.value.mean) + " (se " +
               fmt(sm.value.standard_error) + "), numeraire " + fmt(nm.value.mean) +
               " (se " + fmt(nm.value.standard_error) + ")";
}

}  // namespace

int main() {
    std::printf("acceptance suite (%d worker threads where parallel)\n", kThreads);
    run_criterion(1, "Riccati correctness", criterion_1_riccati);
    run_criterion(2, "PDE-ODE cross-validation", criterion_2_pde_ode);
    run_criterion(3, "Ergodic extraction", criterion_3_ergodic_extraction);
    run_criterion(4, "Gradient-form sandwich", criterion_4_sandwich);
    run_criterion(5, "Closed-form agreement", criterion_5_closed_forms);
    run_criterion(6, "Counter-example", criterion_6_counterexample);
    run_criterion(7, "Pathwise identities", criterion_7_path_identities);
    run_criterion(8, "Duality", criterion_8_duality);
    run_criterion(9, "Horizon convergence (MC)", criterion_9_longrun_mc);
    run_criterion(10, "Assumption checker verdicts", criterion_10_checker);
    run_criterion(11, "Generator consistency", criterion_11_generator);
    run_criterion(12, "Supermartingale / numeraire", criterion_12_deflation);

    int failures = 0;
    for (const auto& r : g_results) failures += r.pass ? 0 : 1;
    std::printf("%d/%zu criteria passed\n", static_cast<int>(g_results.size()) - failures,
                g_results.size());
    return failures;
}
