#include "longrun/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace longrun {

namespace {

// Closed-form symmetric square root for d <= 2, eigendecomposition above.
void spd_sqrt_into(const Eigen::MatrixXd& a, Eigen::MatrixXd& out) {
    const int d = static_cast<int>(a.rows());
    if (d == 1) {
        out(0, 0) = std::sqrt(a(0, 0));
        return;
    }
    if (d == 2) {
        const double det = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
        const double s = std::sqrt(std::max(det, 0.0));
        const double t = std::sqrt(a(0, 0) + a(1, 1) + 2.0 * s);
        out = a;
        out(0, 0) += s;
        out(1, 1) += s;
        out /= t;
        return;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    out = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
          es.eigenvectors().transpose();
}

double spd_min_eig(const Eigen::MatrixXd& a) {
    const int d = static_cast<int>(a.rows());
    if (d == 1) return a(0, 0);
    if (d == 2) {
        const double tr = a(0, 0) + a(1, 1);
        const double det = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
        const double disc = std::sqrt(std::max(tr * tr - 4.0 * det, 0.0));
        return 0.5 * (tr - disc);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

// Per-step coefficient snapshot shared by every functional on the path.
struct StepEval {
    Eigen::MatrixXd sqrtX;
    Eigen::MatrixXd b;
    Eigen::MatrixXd sigma;   // n x m
    Eigen::MatrixXd Sigma;   // n x n
    Eigen::VectorXd nu;      // n
    Eigen::MatrixXd C;       // m x d
    Eigen::VectorXd rho;     // d
    Eigen::MatrixXd D;       // m x m
    Eigen::MatrixXd Theta;   // m x m
    bool theta_identity = false;
    double r = 0.0;
};

void eval_step(const ModelSpec& spec, const Eigen::MatrixXd& X, StepEval& ev) {
    const auto& mk = spec.market;
    spd_sqrt_into(X, ev.sqrtX);
    if (auto* w = spec.wishart()) {
        ev.b = w->L * w->L.transpose() + w->K * X + X * w->K.transpose();
    } else {
        ev.b = std::get<GeneralStateCoeffs>(spec.state).b(X);
    }
    if (mk.sigma) {
        ev.sigma = (*mk.sigma)(X);
    } else {
        ev.sigma.noalias() = mk.zeta(X) * ev.sqrtX;
    }
    ev.Sigma.noalias() = ev.sigma * ev.sigma.transpose();
    ev.nu = mk.nu(X);
    ev.C = mk.corrC(X);
    ev.rho = mk.rho(X);
    const double rho2 = ev.rho.squaredNorm();
    spd_sqrt_into((Eigen::MatrixXd::Identity(mk.m, mk.m) -
                   rho2 * ev.C * ev.C.transpose())
                      .eval(),
                  ev.D);
    ev.theta_identity = mk.m <= mk.n;
    if (!ev.theta_identity) {
        ev.Theta.noalias() = ev.sigma.transpose() * ev.Sigma.llt().solve(ev.sigma);
    }
    ev.r = eval_rate(spec, X);
}

// eta = sum a^{ij} grad_ij; Wishart closed form 2 sqrt(X) grad Lambda.
Eigen::MatrixXd eval_eta_lean(const ModelSpec& spec, const StepEval& ev,
                              const Eigen::MatrixXd& X,
                              const Eigen::MatrixXd& grad) {
    if (auto* w = spec.wishart()) {
        return 2.0 * ev.sqrtX * grad * w->Lambda;
    }
    const int d = spec.dim();
    const auto& gen = std::get<GeneralStateCoeffs>(spec.state);
    const Eigen::MatrixXd F = gen.F(X);
    const Eigen::MatrixXd G = gen.G(X);
    Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            for (int k = 0; k < d; ++k) {
                for (int l = 0; l < d; ++l) {
                    eta(k, l) += grad(i, j) * (F(i, k) * G(l, j) + F(j, k) * G(l, i));
                }
            }
        }
    }
    return eta;
}

Eigen::VectorXd policy_from_grad(const ModelSpec& spec, const StepEval& ev,
                                 const Eigen::MatrixXd& eta) {
    const auto& mk = spec.market;
    const Eigen::VectorXd hedge = ev.C * eta * ev.rho;
    const double inv1mp = 1.0 / (1.0 - mk.p);
    if (mk.m > mk.n) {
        return inv1mp * (ev.nu + ev.Sigma.llt().solve(ev.sigma * hedge));
    }
    return inv1mp *
           (ev.sigma * (ev.sigma.transpose() * ev.sigma)
                           .llt()
                           .solve((ev.sigma.transpose() * ev.nu + hedge).eval()));
}

// Walks one path, invoking on_step(k, t_k, X_k, ev, dB_k, dW_k) before the
// state advances, and on_node(k+1, X_{k+1}) after. Draw order per step is
// fixed: dB row-major, then dW.
template <typename OnStep, typename OnNode>
int walk_path(const ModelSpec& spec, const Eigen::MatrixXd& x0, double T,
              double dt, RngStream& stream, OnStep&& on_step, OnNode&& on_node) {
    const int d = spec.dim();
    const int m = spec.market.m;
    const int n_steps = static_cast<int>(std::llround(T / dt));
    const double sdt = std::sqrt(dt);

    Eigen::MatrixXd X = x0;
    Eigen::MatrixXd dB(d, d);
    Eigen::VectorXd dW(m);
    Eigen::MatrixXd noise(d, d), Xn(d, d);
    StepEval ev;
    ev.sqrtX.resize(d, d);
    ev.D.resize(m, m);

    const bool wishart = spec.is_wishart();
    const Eigen::MatrixXd* Lambda = wishart ? &spec.wishart()->Lambda : nullptr;
    const auto* gen = wishart ? nullptr : &std::get<GeneralStateCoeffs>(spec.state);

    int projected = 0;
    on_node(0, X);
    for (int k = 0; k < n_steps; ++k) {
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) dB(i, j) = sdt * stream.gaussian();
        for (int i = 0; i < m; ++i) dW(i) = sdt * stream.gaussian();

        eval_step(spec, X, ev);
        on_step(k, k * dt, X, ev, dB, dW);

        if (wishart) {
            noise.noalias() = ev.sqrtX * dB * Lambda->transpose();
        } else {
            const Eigen::MatrixXd F = gen->F(X);
            const Eigen::MatrixXd G = gen->G(X);
            noise.noalias() = F * dB * G;
        }
        Xn = X + ev.b * dt + noise + noise.transpose();
        const double floor = 1e-10 * (1.0 + X.norm());
        if (spd_min_eig((0.5 * (Xn + Xn.transpose())).eval()) < floor) {
            Xn = project_to_spd(SymMatrix::from_dense(Xn), floor).dense();
            ++projected;
        } else {
            Xn = 0.5 * (Xn + Xn.transpose()).eval();
        }
        if (!Xn.allFinite() || Xn.norm() > 1e10) {
            std::ostringstream oss;
            oss << "simulate: state norm explosion at t = " << (k + 1) * dt
                << " (||X|| = " << Xn.norm() << ")";
            throw std::runtime_error(oss.str());
        }
        X = Xn;
        on_node(k + 1, X);
    }
    return projected;
}

// Deflator loadings for the increments of log M^eta and log Z^{phi,T}.
struct DeflatorLoadings {
    Eigen::MatrixXd GB_M;  // d x d, against dB
    Eigen::VectorXd GW_M;  // m, against dW
    Eigen::MatrixXd GB_Z;
    Eigen::VectorXd GW_Z;
};

void deflator_loadings(const ModelSpec& spec, const StepEval& ev,
                       const Eigen::MatrixXd& eta, DeflatorLoadings& out) {
    const double q = spec.market.q;
    const Eigen::VectorXd sigma_nu = ev.sigma.transpose() * ev.nu;  // m
    const Eigen::VectorXd w = ev.C * eta * ev.rho;                  // m
    const Eigen::VectorXd theta_w = ev.theta_identity ? w : (ev.Theta * w).eval();
    const Eigen::VectorXd cs = ev.C.transpose() * sigma_nu;         // d
    const Eigen::VectorXd ctw = ev.C.transpose() * theta_w;         // d

    out.GB_M = eta - (cs + ctw) * ev.rho.transpose();
    out.GW_M = -(ev.D.transpose() * (sigma_nu + theta_w));
    out.GB_Z = eta - q * (cs + ctw) * ev.rho.transpose();
    out.GW_Z = -q * (ev.D.transpose() * (sigma_nu + theta_w));
}

void check_positive(double v, const char* what) {
    if (!(v > 0.0)) {
        std::ostringstream oss;
        oss << "simulate: " << what << " must be positive";
        throw std::invalid_argument(oss.str());
    }
}

void run_paths(long n_paths, int n_threads, const std::function<void(long)>& body) {
    n_threads = std::max(1, n_threads);
    if (n_threads == 1) {
        for (long i = 0; i < n_paths; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<long> next{0};
    for (int t = 0; t < n_threads; ++t) {
        pool.emplace_back([&]() {
            for (;;) {
                const long i = next.fetch_add(1);
                if (i >= n_paths) break;
                body(i);
            }
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace

McEstimate mc_estimate(const std::vector<double>& values, double dt) {
    McEstimate est;
    est.n_paths = static_cast<long>(values.size());
    est.dt = dt;
    if (values.empty()) return est;
    // pairwise summation keeps the reduction order independent of the
    // thread schedule that produced the values
    std::function<double(size_t, size_t)> psum = [&](size_t lo, size_t hi) -> double {
        if (hi - lo <= 8) {
            double s = 0.0;
            for (size_t i = lo; i < hi; ++i) s += values[i];
            return s;
        }
        const size_t mid = lo + (hi - lo) / 2;
        return psum(lo, mid) + psum(mid, hi);
    };
    est.mean = psum(0, values.size()) / static_cast<double>(values.size());
    std::function<double(size_t, size_t)> psq = [&](size_t lo, size_t hi) -> double {
        if (hi - lo <= 8) {
            double s = 0.0;
            for (size_t i = lo; i < hi; ++i) {
                const double c = values[i] - est.mean;
                s += c * c;
            }
            return s;
        }
        const size_t mid = lo + (hi - lo) / 2;
        return psq(lo, mid) + psq(mid, hi);
    };
    if (values.size() > 1) {
        const double var = psq(0, values.size()) / static_cast<double>(values.size() - 1);
        est.standard_error = std::sqrt(var / static_cast<double>(values.size()));
    }
    return est;
}

PathBundle simulate_state(const ModelSpec& spec, const SpdMatrix& x0, double T,
                          double dt, RngStream& stream) {
    check_positive(dt, "dt");
    PathBundle out;
    out.dt = dt;
    const int n_steps = static_cast<int>(std::llround(T / dt));
    out.times.reserve(n_steps + 1);
    out.dB.reserve(n_steps);
    out.dW.reserve(n_steps);
    out.X.reserve(n_steps + 1);
    out.projected_steps = walk_path(
        spec, x0.dense(), T, dt, stream,
        [&](int, double, const Eigen::MatrixXd&, const StepEval&,
            const Eigen::MatrixXd& dB, const Eigen::VectorXd& dW) {
            out.dB.push_back(dB);
            out.dW.push_back(dW);
        },
        [&](int k, const Eigen::MatrixXd& X) {
            out.times.push_back(k * dt);
            out.X.push_back(X);
        });
    return out;
}

std::vector<Eigen::VectorXd> simulate_correlated_drivers(const ModelSpec& spec,
                                                         const PathBundle& path) {
    std::vector<Eigen::VectorXd> dZ;
    dZ.reserve(path.n_steps());
    StepEval ev;
    ev.sqrtX.resize(spec.dim(), spec.dim());
    ev.D.resize(spec.market.m, spec.market.m);
    for (int k = 0; k < path.n_steps(); ++k) {
        eval_step(spec, path.X[k], ev);
        dZ.push_back(ev.C * path.dB[k] * ev.rho + ev.D * path.dW[k]);
    }
    return dZ;
}

WealthPath simulate_wealth(const ModelSpec& spec, const PathBundle& path,
                           const std::vector<Eigen::VectorXd>& dZ,
                           const PolicyMap& policy, double w0) {
    check_positive(w0, "initial wealth");
    if (dZ.size() != static_cast<size_t>(path.n_steps())) {
        throw std::invalid_argument("simulate_wealth: dZ does not match the path");
    }
    WealthPath out;
    out.log_wealth.reserve(path.n_steps() + 1);
    double lw = std::log(w0);
    out.log_wealth.push_back(lw);
    StepEval ev;
    ev.sqrtX.resize(spec.dim(), spec.dim());
    ev.D.resize(spec.market.m, spec.market.m);
    for (int k = 0; k < path.n_steps(); ++k) {
        eval_step(spec, path.X[k], ev);
        const Eigen::VectorXd pi = policy(path.times[k], path.X[k]);
        const Eigen::VectorXd sig_pi = ev.Sigma * pi;
        lw += (ev.r + pi.dot(ev.Sigma * ev.nu) - 0.5 * pi.dot(sig_pi)) * path.dt +
              (ev.sigma.transpose() * pi).dot(dZ[k]);
        out.log_wealth.push_back(lw);
    }
    return out;
}

DeflatorPath simulate_deflator(const ModelSpec& spec, const PathBundle& path,
                               const GradMap& grad, double T) {
    DeflatorPath out;
    out.log_deflator.reserve(path.n_steps() + 1);
    out.log_Z.reserve(path.n_steps() + 1);
    double lm = 0.0, lz = 0.0;
    out.log_deflator.push_back(lm);
    out.log_Z.push_back(lz);
    StepEval ev;
    ev.sqrtX.resize(spec.dim(), spec.dim());
    ev.D.resize(spec.market.m, spec.market.m);
    DeflatorLoadings ld;
    for (int k = 0; k < path.n_steps(); ++k) {
        eval_step(spec, path.X[k], ev);
        const Eigen::MatrixXd g = grad(T - path.times[k], path.X[k]);
        const Eigen::MatrixXd eta = eval_eta_lean(spec, ev, path.X[k], g);
        deflator_loadings(spec, ev, eta, ld);
        lm += -ev.r * path.dt + ld.GB_M.cwiseProduct(path.dB[k]).sum() -
              0.5 * ld.GB_M.squaredNorm() * path.dt + ld.GW_M.dot(path.dW[k]) -
              0.5 * ld.GW_M.squaredNorm() * path.dt;
        lz += ld.GB_Z.cwiseProduct(path.dB[k]).sum() -
              0.5 * ld.GB_Z.squaredNorm() * path.dt + ld.GW_Z.dot(path.dW[k]) -
              0.5 * ld.GW_Z.squaredNorm() * path.dt;
        out.log_deflator.push_back(lm);
        out.log_Z.push_back(lz);
    }
    return out;
}

PathIdentityResiduals check_path_identities(const ModelSpec& spec,
                                            const PathBundle& path,
                                            const ValueMap& phi,
                                            const GradMap& grad, double T) {
    const double p = spec.market.p;
    const double q = spec.market.q;
    // Wealth under the policy generated by the same gradient, sharing the
    // path's increments.
    std::vector<Eigen::VectorXd> dZ = simulate_correlated_drivers(spec, path);
    StepEval ev;
    ev.sqrtX.resize(spec.dim(), spec.dim());
    ev.D.resize(spec.market.m, spec.market.m);
    double lw = 0.0;
    DeflatorPath defl = simulate_deflator(spec, path, grad, T);
    for (int k = 0; k < path.n_steps(); ++k) {
        eval_step(spec, path.X[k], ev);
        const Eigen::MatrixXd g = grad(T - path.times[k], path.X[k]);
        const Eigen::MatrixXd eta = eval_eta_lean(spec, ev, path.X[k], g);
        const Eigen::VectorXd pi = policy_from_grad(spec, ev, eta);
        const Eigen::VectorXd sig_pi = ev.Sigma * pi;
        lw += (ev.r + pi.dot(ev.Sigma * ev.nu) - 0.5 * pi.dot(sig_pi)) * path.dt +
              (ev.sigma.transpose() * pi).dot(dZ[k]);
    }
    const double phi_gap = phi(0.0, path.X.back()) - phi(T, path.X.front());
    const double lz = defl.log_Z.back();
    PathIdentityResiduals res;
    res.wealth_side = std::abs(p * lw + phi_gap - lz);
    res.deflator_side = std::abs(q * defl.log_deflator.back() + (1.0 - q) * phi_gap - lz);
    return res;
}

DualityReport mc_duality(const ModelSpec& spec, const SpdMatrix& x0, double T,
                         long n_paths, double dt, std::uint64_t master_seed,
                         const HorizonRiccatiPath& vpath, int n_threads) {
    const double p = spec.market.p;
    const double q = spec.market.q;
    std::vector<double> wealth_vals(n_paths), deflator_vals(n_paths);
    const Eigen::MatrixXd x0d = x0.dense();

    run_paths(n_paths, n_threads, [&](long i) {
        RngStream stream(master_seed, static_cast<std::uint64_t>(i));
        double lw = 0.0, lm = 0.0;
        DeflatorLoadings ld;
        walk_path(
            spec, x0d, T, dt, stream,
            [&](int, double t, const Eigen::MatrixXd& X, const StepEval& ev,
                const Eigen::MatrixXd& dB, const Eigen::VectorXd& dW) {
                const Eigen::MatrixXd g = vpath.M_at(T - t);
                const Eigen::MatrixXd eta = eval_eta_lean(spec, ev, X, g);
                const Eigen::VectorXd pi = policy_from_grad(spec, ev, eta);
                const Eigen::VectorXd dZ = ev.C * dB * ev.rho + ev.D * dW;
                const Eigen::VectorXd sig_pi = ev.Sigma * pi;
                lw += (ev.r + pi.dot(ev.Sigma * ev.nu) - 0.5 * pi.dot(sig_pi)) * dt +
                      (ev.sigma.transpose() * pi).dot(dZ);
                deflator_loadings(spec, ev, eta, ld);
                lm += -ev.r * dt + ld.GB_M.cwiseProduct(dB).sum() -
                      0.5 * ld.GB_M.squaredNorm() * dt + ld.GW_M.dot(dW) -
                      0.5 * ld.GW_M.squaredNorm() * dt;
            },
            [](int, const Eigen::MatrixXd&) {});
        wealth_vals[i] = std::exp(p * lw);
        deflator_vals[i] = std::exp(q * lm);
    });

    DualityReport rep;
    rep.wealth_side = mc_estimate(wealth_vals, dt);
    rep.deflator_side = mc_estimate(deflator_vals, dt);
    rep.v_reference = (vpath.M_at(T) * x0d).trace() + vpath.m_at(T);
    const double target_w = std::exp(rep.v_reference);
    const double target_m = std::exp((1.0 - q) * rep.v_reference);
    auto gap_in_se = [](double diff, double se) {
        if (diff == 0.0) return 0.0;
        return std::abs(diff) / std::max(se, std::numeric_limits<double>::min());
    };
    rep.wealth_gap_in_se =
        gap_in_se(rep.wealth_side.mean - target_w, rep.wealth_side.standard_error);
    rep.deflator_gap_in_se = gap_in_se(rep.deflator_side.mean - target_m,
                                       rep.deflator_side.standard_error);
    rep.pass = rep.wealth_gap_in_se <= 3.0 && rep.deflator_gap_in_se <= 3.0;
    return rep;
}

std::vector<LongrunConvergenceRow> mc_longrun_convergence(
    const ModelSpec& spec, const SpdMatrix& x0, double t_window,
    const std::vector<double>& T_list, long n_paths, double dt,
    std::uint64_t master_seed, const HorizonRiccatiPath& vpath,
    const Eigen::MatrixXd& Mhat, int n_threads) {
    const size_t nT = T_list.size();
    std::vector<std::vector<double>> sup_vals(nT, std::vector<double>(n_paths));
    std::vector<std::vector<double>> dist_vals(nT, std::vector<double>(n_paths));
    const Eigen::MatrixXd x0d = x0.dense();

    run_paths(n_paths, n_threads, [&](long i) {
        RngStream stream(master_seed, static_cast<std::uint64_t>(i));
        std::vector<double> lwT(nT, 0.0), sup(nT, 0.0), dist(nT, 0.0);
        double lw_hat = 0.0;
        walk_path(
            spec, x0d, t_window, dt, stream,
            [&](int, double t, const Eigen::MatrixXd& X, const StepEval& ev,
                const Eigen::MatrixXd& dB, const Eigen::VectorXd& dW) {
                const Eigen::VectorXd dZ = ev.C * dB * ev.rho + ev.D * dW;
                const Eigen::MatrixXd eta_hat = eval_eta_lean(spec, ev, X, Mhat);
                const Eigen::VectorXd pi_hat = policy_from_grad(spec, ev, eta_hat);
                const Eigen::VectorXd sig_nu = ev.Sigma * ev.nu;
                lw_hat += (ev.r + pi_hat.dot(sig_nu) -
                           0.5 * pi_hat.dot(ev.Sigma * pi_hat)) * dt +
                          (ev.sigma.transpose() * pi_hat).dot(dZ);
                for (size_t j = 0; j < nT; ++j) {
                    const Eigen::MatrixXd g = vpath.M_at(T_list[j] - t);
                    const Eigen::MatrixXd eta = eval_eta_lean(spec, ev, X, g);
                    const Eigen::VectorXd pi = policy_from_grad(spec, ev, eta);
                    lwT[j] += (ev.r + pi.dot(sig_nu) - 0.5 * pi.dot(ev.Sigma * pi)) * dt +
                              (ev.sigma.transpose() * pi).dot(dZ);
                    sup[j] = std::max(sup[j], std::abs(std::exp(lwT[j] - lw_hat) - 1.0));
                    const Eigen::VectorXd dpi = pi - pi_hat;
                    dist[j] += dpi.dot(ev.Sigma * dpi) * dt;
                }
            },
            [](int, const Eigen::MatrixXd&) {});
        for (size_t j = 0; j < nT; ++j) {
            sup_vals[j][i] = sup[j];
            dist_vals[j][i] = dist[j];
        }
    });

    std::vector<LongrunConvergenceRow> rows(nT);
    for (size_t j = 0; j < nT; ++j) {
        rows[j].horizon = T_list[j];
        rows[j].sup_ratio_deviation = mc_estimate(sup_vals[j], dt);
        rows[j].strategy_distance = mc_estimate(dist_vals[j], dt);
    }
    return rows;
}

OneSidedMcReport mc_supermartingale_deflation(const ModelSpec& spec,
                                              const SpdMatrix& x0, double T,
                                              long n_paths, double dt,
                                              std::uint64_t master_seed,
                                              const GradMap& grad,
                                              const PolicyMap& policy, double w0,
                                              int n_threads) {
    check_positive(w0, "initial wealth");
    std::vector<double> vals(n_paths);
    const Eigen::MatrixXd x0d = x0.dense();
    run_paths(n_paths, n_threads, [&](long i) {
        RngStream stream(master_seed, static_cast<std::uint64_t>(i));
        double lw = std::log(w0), lm = 0.0;
        DeflatorLoadings ld;
        walk_path(
            spec, x0d, T, dt, stream,
            [&](int, double t, const Eigen::MatrixXd& X, const StepEval& ev,
                const Eigen::MatrixXd& dB, const Eigen::VectorXd& dW) {
                const Eigen::VectorXd pi = policy(t, X);
                const Eigen::VectorXd dZ = ev.C * dB * ev.rho + ev.D * dW;
                lw += (ev.r + pi.dot(ev.Sigma * ev.nu) -
                       0.5 * pi.dot(ev.Sigma * pi)) * dt +
                      (ev.sigma.transpose() * pi).dot(dZ);
                const Eigen::MatrixXd g = grad(T - t, X);
                const Eigen::MatrixXd eta = eval_eta_lean(spec, ev, X, g);
                deflator_loadings(spec, ev, eta, ld);
                lm += -ev.r * dt + ld.GB_M.cwiseProduct(dB).sum() -
                      0.5 * ld.GB_M.squaredNorm() * dt + ld.GW_M.dot(dW) -
                      0.5 * ld.GW_M.squaredNorm() * dt;
            },
            [](int, const Eigen::MatrixXd&) {});
        vals[i] = std::exp(lm + lw);
    });
    OneSidedMcReport rep;
    rep.value = mc_estimate(vals, dt);
    rep.bound = w0;
    rep.pass = rep.value.mean <= rep.bound + 3.0 * rep.value.standard_error;
    return rep;
}

OneSidedMcReport mc_numeraire(const ModelSpec& spec, const SpdMatrix& x0,
                              double T, long n_paths, double dt,
                              std::uint64_t master_seed,
                              const Eigen::MatrixXd& Mhat,
                              const PolicyMap& perturbed_policy, int n_threads) {
    std::vector<double> vals(n_paths);
    const Eigen::MatrixXd x0d = x0.dense();
    run_paths(n_paths, n_threads, [&](long i) {
        RngStream stream(master_seed, static_cast<std::uint64_t>(i));
        double lw = 0.0, lw_hat = 0.0, lz = 0.0;
        DeflatorLoadings ld;
        walk_path(
            spec, x0d, T, dt, stream,
            [&](int, double t, const Eigen::MatrixXd& X, const StepEval& ev,
                const Eigen::MatrixXd& dB, const Eigen::VectorXd& dW) {
                const Eigen::VectorXd dZ = ev.C * dB * ev.rho + ev.D * dW;
                const Eigen::MatrixXd eta = eval_eta_lean(spec, ev, X, Mhat);
                const Eigen::VectorXd pi_hat = policy_from_grad(spec, ev, eta);
                const Eigen::VectorXd pi = perturbed_policy(t, X);
                lw_hat += (ev.r + pi_hat.dot(ev.Sigma * ev.nu) -
                           0.5 * pi_hat.dot(ev.Sigma * pi_hat)) * dt +
                          (ev.sigma.transpose() * pi_hat).dot(dZ);
                lw += (ev.r + pi.dot(ev.Sigma * ev.nu) -
                       0.5 * pi.dot(ev.Sigma * pi)) * dt +
                      (ev.sigma.transpose() * pi).dot(dZ);
                deflator_loadings(spec, ev, eta, ld);
                lz += ld.GB_Z.cwiseProduct(dB).sum() -
                      0.5 * ld.GB_Z.squaredNorm() * dt + ld.GW_Z.dot(dW) -
                      0.5 * ld.GW_Z.squaredNorm() * dt;
            },
            [](int, const Eigen::MatrixXd&) {});
        vals[i] = std::exp(lz + lw - lw_hat);
    });
    OneSidedMcReport rep;
    rep.value = mc_estimate(vals, dt);
    rep.bound = 1.0;
    rep.pass = rep.value.mean <= rep.bound + 3.0 * rep.value.standard_error;
    return rep;
}

double apply_generator(const ModelSpec& spec, const SpdMatrix& x,
                       const std::function<double(const Eigen::MatrixXd&)>& phi,
                       double fd_step) {
    const int d = spec.dim();
    const Eigen::MatrixXd xd = x.dense();
    const double h = std::min(fd_step, 0.45 * x.min_eigenvalue());
    StateCoeffs sc = eval_state_coeffs(spec, x);

    auto phi_sym = [&](int i, int j, double s) {
        Eigen::MatrixXd y = xd;
        if (i == j) {
            y(i, i) += s;
        } else {
            y(i, j) += 0.5 * s;
            y(j, i) += 0.5 * s;
        }
        return phi(y);
    };
    auto phi_sym2 = [&](int i, int j, double s, int k, int l, double t) {
        Eigen::MatrixXd y = xd;
        if (i == j) y(i, i) += s;
        else { y(i, j) += 0.5 * s; y(j, i) += 0.5 * s; }
        if (k == l) y(k, k) += t;
        else { y(k, l) += 0.5 * t; y(l, k) += 0.5 * t; }
        return phi(y);
    };

    double value = 0.0;
    const double phi0 = phi(xd);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            const double dij = (phi_sym(i, j, h) - phi_sym(i, j, -h)) / (2.0 * h);
            value += sc.b(i, j) * dij;
            for (int k = 0; k < d; ++k) {
                for (int l = 0; l < d; ++l) {
                    double d2;
                    if (i == k && j == l) {
                        d2 = (phi_sym(i, j, h) - 2.0 * phi0 + phi_sym(i, j, -h)) / (h * h);
                    } else {
                        d2 = (phi_sym2(i, j, h, k, l, h) - phi_sym2(i, j, h, k, l, -h) -
                              phi_sym2(i, j, -h, k, l, h) + phi_sym2(i, j, -h, k, l, -h)) /
                             (4.0 * h * h);
                    }
                    const double a_pair = (sc.a[i][j] * sc.a[k][l].transpose()).trace();
                    value += 0.5 * a_pair * d2;
                }
            }
        }
    }
    return value;
}

GeneratorCheckReport generator_check(const ModelSpec& spec, const SpdMatrix& x,
                                     const std::function<double(const Eigen::MatrixXd&)>& phi,
                                     double h, long n_paths, double dt,
                                     std::uint64_t master_seed, int n_threads) {
    check_positive(h, "h");
    std::vector<double> vals(n_paths);
    const Eigen::MatrixXd x0d = x.dense();
    run_paths(n_paths, n_threads, [&](long i) {
        RngStream stream(master_seed, static_cast<std::uint64_t>(i));
        Eigen::MatrixXd xT;
        walk_path(
            spec, x0d, h, dt, stream,
            [](int, double, const Eigen::MatrixXd&, const StepEval&,
               const Eigen::MatrixXd&, const Eigen::VectorXd&) {},
            [&](int, const Eigen::MatrixXd& X) { xT = X; });
        vals[i] = phi(xT);
    });
    GeneratorCheckReport rep;
    McEstimate est = mc_estimate(vals, dt);
    rep.mc_rate = (est.mean - phi(x0d)) / h;
    rep.standard_error = est.standard_error / h;
    rep.generator_value = apply_generator(spec, x, phi);
    // O(h) expansion coefficient via a second application of L to L phi
    // (exact for the quadratic trace polynomials used in the checks).
    auto lphi = [&](const Eigen::MatrixXd& y) {
        return apply_generator(spec, SpdMatrix::from_dense(y), phi);
    };
    rep.bias_band = h * std::abs(apply_generator(spec, x, lphi));
    rep.pass = std::abs(rep.mc_rate - rep.generator_value) <=
               3.0 * rep.standard_error + rep.bias_band;
    return rep;
}

}  // namespace longrun
