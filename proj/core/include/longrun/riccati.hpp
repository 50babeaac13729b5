#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "longrun/model.hpp"

namespace longrun {

/// Stabilizing solution of the ergodic matrix Riccati equation
///   0 = 2 M L(1-q rho rho')L' M + A'M + M A + (p(r1+r1') - q z'nn'z)/2,
/// with A = K - q Lambda rho nu' zeta, together with the long-run growth
/// rate lambda = Tr(LL' M) + p r0.
struct RiccatiSolution {
    Eigen::MatrixXd Mhat;
    double lambda_hat = 0.0;
    Eigen::MatrixXd closed_loop;      // A + 2 Lambda(1-q rho rho')Lambda' Mhat
    double residual_norm = 0.0;       // Frobenius norm of the equation at Mhat
    double stability_margin = 0.0;    // -max eig of (closed_loop + closed_loop')/2
    double hurwitz_margin = 0.0;      // -max real part of closed-loop eigenvalues
    int newton_iterations = 0;
};

/// Standard-form data: with D = -M the equation reads
/// D BB' D - D A - A' D - CC' = 0.
struct RiccatiStandardForm {
    Eigen::MatrixXd A;
    Eigen::MatrixXd BBt;  // 2 Lambda (1 - q rho rho') Lambda'
    Eigen::MatrixXd CCt;  // (-p(r1+r1') + q zeta'nu nu'zeta)/2
    Eigen::MatrixXd LLt;  // LL'
};

/// Requires a constant-coefficient Wishart spec (providers are probed at
/// two points and must agree); throws std::invalid_argument otherwise.
RiccatiStandardForm riccati_standard_form(const ModelSpec& spec);

/// Riccati polynomial M -> M BB'M + A'M + MA - CC'; the right-hand side of
/// the horizon ODE dM/dT and the residual of the ergodic equation.
Eigen::MatrixXd riccati_rhs(const ModelSpec& spec, const Eigen::MatrixXd& M);

/// Newton-Kleinman iteration with an initial stabilizing gain that pins the
/// starting closed loop at -identity; each step solves a Lyapunov equation
/// by Kronecker vectorization. Throws std::invalid_argument when the
/// hypotheses fail (p < 0, d <= n, LL' > (d+1)Lambda Lambda' > 0 and a
/// positive semidefinite forcing term with either definite forcing or an
/// already-stable drift), std::runtime_error when 100 iterations do not
/// reach the residual target.
RiccatiSolution solve_ergodic_riccati(const ModelSpec& spec);

/// Finite-horizon Riccati path: v(T, x) = Tr(M(T)x) + m(T), M(0) = 0,
/// m(0) = 0, integrated with classic RK4 at fixed dt.
struct HorizonRiccatiPath {
    double dt = 0.0;
    std::vector<double> times;
    std::vector<Eigen::MatrixXd> M;
    std::vector<double> m;
    double step_error_estimate = 0.0;  // Richardson halving estimate at T

    const Eigen::MatrixXd& M_final() const { return M.back(); }
    Eigen::MatrixXd M_at(double s) const;
    double m_at(double s) const;
};

HorizonRiccatiPath solve_horizon_riccati_ode(const ModelSpec& spec, double T,
                                             double dt = 1e-3);

/// Policy of the affine candidate value Tr(Mx): eval_pi with gradient M.
Eigen::VectorXd affine_policy(const ModelSpec& spec, const Eigen::MatrixXd& M,
                              const SpdMatrix& x);

/// Operator value on affine candidates. For d <= n the image is
/// Tr(x . linear) + constant. For the (d, n) = (2, 1) geometry with
/// zeta = (z, 0) the image additionally expands over the monomials
/// x, y, z, y^2/x plus a constant; other d > n geometries are rejected.
struct AffineFCoeffs {
    Eigen::MatrixXd linear;
    double constant = 0.0;
    bool has_expansion = false;
    double cx = 0.0, cy = 0.0, cz = 0.0, cy2x = 0.0, c0 = 0.0;

    double eval(const Eigen::MatrixXd& X) const;
};

AffineFCoeffs eval_affine_F_coeffs(const ModelSpec& spec, const Eigen::MatrixXd& M);

/// Multi-start minimization of the summed squared affine-image coefficients
/// over symmetric M, plus the analytic implication chain showing why no
/// affine candidate can solve the ergodic equation when r1 > 0.
struct CounterexampleReport {
    Eigen::MatrixXd best_M;
    double cx = 0.0, cy = 0.0, cz = 0.0, cy2x = 0.0, c0 = 0.0;
    double min_residual = 0.0;  // sum of squared coefficients at best_M
    double witness_z_coeff = 0.0;  // z-coefficient forced by the chain: p r1
    std::string chain;
    int n_starts = 0;
    unsigned seed = 0;
};

CounterexampleReport counterexample_search(const ModelSpec& spec,
                                           int n_starts = 64,
                                           unsigned seed = 2024);

}  // namespace longrun
