#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "longrun/model.hpp"
#include "longrun/riccati.hpp"
#include "longrun/rng.hpp"

namespace longrun {

/// One simulated path: per-step driver increments and the SPD state nodes.
/// dB entries are iid N(0, dt), dW is independent of dB; X stays inside
/// the cone by spectral projection with floor 1e-10 (1 + ||X||).
struct PathBundle {
    double dt = 0.0;
    std::vector<double> times;        // size n_steps + 1
    std::vector<Eigen::MatrixXd> dB;  // size n_steps, each d x d
    std::vector<Eigen::VectorXd> dW;  // size n_steps, each m
    std::vector<Eigen::MatrixXd> X;   // size n_steps + 1, dense SPD
    int projected_steps = 0;

    int n_steps() const { return static_cast<int>(dB.size()); }
};

/// Feedback policy (calendar time, state) -> portfolio weights in R^n.
using PolicyMap = std::function<Eigen::VectorXd(double, const Eigen::MatrixXd&)>;
/// Value-gradient provider (time to go, state) -> d x d symmetric gradient.
using GradMap = std::function<Eigen::MatrixXd(double, const Eigen::MatrixXd&)>;
/// Scalar surface (time to go, state) -> value.
using ValueMap = std::function<double(double, const Eigen::MatrixXd&)>;

struct WealthPath {
    std::vector<double> log_wealth;  // size n_steps + 1, log W_t
};

struct DeflatorPath {
    std::vector<double> log_deflator;  // log M^eta_t
    std::vector<double> log_Z;         // log Z^{phi,T}_t
};

struct McEstimate {
    double mean = 0.0;
    double standard_error = 0.0;
    long n_paths = 0;
    double dt = 0.0;
};

McEstimate mc_estimate(const std::vector<double>& values, double dt);

PathBundle simulate_state(const ModelSpec& spec, const SpdMatrix& x0, double T,
                          double dt, RngStream& stream);

/// dZ = C(X) dB rho(X) + D(X) dW per step.
std::vector<Eigen::VectorXd> simulate_correlated_drivers(const ModelSpec& spec,
                                                         const PathBundle& path);

/// Log-Euler wealth under a feedback policy, driven by the supplied dZ
/// (the common-random-numbers contract: wealth and deflators share it).
WealthPath simulate_wealth(const ModelSpec& spec, const PathBundle& path,
                           const std::vector<Eigen::VectorXd>& dZ,
                           const PolicyMap& policy, double w0);

/// Log-Euler supermartingale deflator M^eta and stochastic exponential
/// Z^{phi,T} for the risk premium eta built from grad phi(T - t, X_t).
DeflatorPath simulate_deflator(const ModelSpec& spec, const PathBundle& path,
                               const GradMap& grad, double T);

struct PathIdentityResiduals {
    double wealth_side = 0.0;    // |p log(W_T/W_0) + phi(0,X_T) - phi(T,X_0) - log Z_T|
    double deflator_side = 0.0;  // analogous with q log M and factor (1-q)
};

/// Pathwise identities for a phi solving phi_t = F[phi]; phi supplied as a
/// value surface plus its gradient, both in time-to-go convention.
PathIdentityResiduals check_path_identities(const ModelSpec& spec,
                                            const PathBundle& path,
                                            const ValueMap& phi,
                                            const GradMap& grad, double T);

struct DualityReport {
    McEstimate wealth_side;    // E[(W_T / w0)^p]
    McEstimate deflator_side;  // E[(M^eta_T)^q]
    double v_reference = 0.0;  // v(T, x0) from the Riccati ODE path
    double wealth_gap_in_se = 0.0;
    double deflator_gap_in_se = 0.0;
    bool pass = false;
};

/// Monte Carlo verification of the duality bracketing
/// E[(W_T)^p] = e^{v(T,x0)} = (E[(M_T)^q])^{1/(1-q)} within 3 s.e. each,
/// with v from the supplied finite-horizon Riccati path.
DualityReport mc_duality(const ModelSpec& spec, const SpdMatrix& x0, double T,
                         long n_paths, double dt, std::uint64_t master_seed,
                         const HorizonRiccatiPath& vpath, int n_threads = 1);

struct LongrunConvergenceRow {
    double horizon = 0.0;
    McEstimate sup_ratio_deviation;  // E[sup_{u<=t} |W^T_u / What_u - 1|]
    McEstimate strategy_distance;    // E[int (pi^T - pihat)' Sigma (pi^T - pihat) du]
};

/// Horizon-convergence metrics with common random numbers across horizons and
/// across the (finite-horizon, long-run) wealth pair.
std::vector<LongrunConvergenceRow> mc_longrun_convergence(
    const ModelSpec& spec, const SpdMatrix& x0, double t_window,
    const std::vector<double>& T_list, long n_paths, double dt,
    std::uint64_t master_seed, const HorizonRiccatiPath& vpath,
    const Eigen::MatrixXd& Mhat, int n_threads = 1);

struct OneSidedMcReport {
    McEstimate value;   // mean of the tested functional
    double bound = 0.0; // the supermartingale bound it must not exceed
    bool pass = false;  // mean <= bound * (1 + 3 se/mean-scale)
};

/// E[M^eta_T W^pi_T] <= w0 within 3 s.e. (equality for the optimal pair).
OneSidedMcReport mc_supermartingale_deflation(const ModelSpec& spec,
                                              const SpdMatrix& x0, double T,
                                              long n_paths, double dt,
                                              std::uint64_t master_seed,
                                              const GradMap& grad,
                                              const PolicyMap& policy, double w0,
                                              int n_threads = 1);

/// Numeraire property: E[Z^{vhat}_T W_T / What_T] <= 1 within 3 s.e. for a
/// perturbed admissible policy against the long-run one.
OneSidedMcReport mc_numeraire(const ModelSpec& spec, const SpdMatrix& x0,
                              double T, long n_paths, double dt,
                              std::uint64_t master_seed,
                              const Eigen::MatrixXd& Mhat,
                              const PolicyMap& perturbed_policy,
                              int n_threads = 1);

struct GeneratorCheckReport {
    double mc_rate = 0.0;      // (E[phi(X_h)] - phi(x)) / h
    double standard_error = 0.0;
    double generator_value = 0.0;  // L phi(x) assembled from the coefficients
    double bias_band = 0.0;        // |L(L phi)(x)| h, the O(h) expansion term
    bool pass = false;             // |rate - Lphi| <= 3 se + band
};

GeneratorCheckReport generator_check(const ModelSpec& spec, const SpdMatrix& x,
                                     const std::function<double(const Eigen::MatrixXd&)>& phi,
                                     double h, long n_paths, double dt,
                                     std::uint64_t master_seed, int n_threads = 1);

/// L phi at x via symmetric-extension central differences in the matrix
/// entry directions (exact for quadratic trace polynomials).
double apply_generator(const ModelSpec& spec, const SpdMatrix& x,
                       const std::function<double(const Eigen::MatrixXd&)>& phi,
                       double fd_step = 0.25);

}  // namespace longrun
