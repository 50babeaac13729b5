#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include "longrun/spd.hpp"

namespace longrun {

/// Coefficient provider: point evaluation at a dense SPD state matrix.
using MatrixProvider = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

MatrixProvider constant_provider(const Eigen::MatrixXd& value);

/// Wishart state dX = (LL' + KX + XK')dt + sqrt(X) dB L' + L dB' sqrt(X),
/// written with volatility matrix Lambda in place of the last L.
struct WishartParams {
    int d = 1;
    Eigen::MatrixXd K;       // mean reversion
    Eigen::MatrixXd L;       // level
    Eigen::MatrixXd Lambda;  // volatility
};

/// General state coefficients b, F, G of the matrix-valued SDE
/// dX = b dt + F dB G + G' dB' F'.
struct GeneralStateCoeffs {
    int d = 1;
    MatrixProvider b;  // d x d symmetric
    MatrixProvider F;  // d x d
    MatrixProvider G;  // d x d
};

struct MarketParams {
    int n = 1;         // risky assets
    int m = 1;         // asset Brownian drivers; the Wishart specialization fixes m = d
    double p = -1.0;   // risk aversion exponent, p < 1, p != 0
    double q = 0.5;    // conjugate p/(p-1), stored alongside p
    double r0 = 0.0;   // rate level: r(x) = r0 + Tr(r1 x)
    Eigen::MatrixXd r1;   // d x d rate loading
    MatrixProvider zeta;  // n x d
    MatrixProvider nu;    // n x 1 market price of risk
    MatrixProvider rho;   // d x 1 correlation loading
    MatrixProvider corrC; // m x d correlation mixing matrix C
    /// Optional explicit sigma (n x m). Defaults to zeta(x) * sqrt(x),
    /// which requires m == d; the m != d code path is exercised through
    /// this hook in unit tests only.
    std::optional<MatrixProvider> sigma;
};

struct ModelSpec {
    std::variant<WishartParams, GeneralStateCoeffs> state;
    MarketParams market;
    double kappa_lower = 1.0;  // sandwich constants bounding Abar by A for this p
    double kappa_upper = 1.0;

    int dim() const;
    bool is_wishart() const { return std::holds_alternative<WishartParams>(state); }
    const WishartParams* wishart() const { return std::get_if<WishartParams>(&state); }

    /// Wishart factory: fixes m = d and C = identity, derives q and the
    /// kappa constants from p. Throws on inconsistent dimensions or p
    /// outside {p < 1, p != 0}.
    static ModelSpec wishart_model(WishartParams state, MarketParams market);
    static ModelSpec general_model(GeneralStateCoeffs state, MarketParams market);
};

/// Point values of the state SDE coefficients and the a^{ij} tensor.
struct StateCoeffs {
    Eigen::MatrixXd b;  // drift
    Eigen::MatrixXd f;  // FF'
    Eigen::MatrixXd g;  // G'G
    std::vector<std::vector<Eigen::MatrixXd>> a;  // a[i][j] is d x d
};

struct MarketCoeffs {
    Eigen::MatrixXd sigma;  // n x m
    Eigen::MatrixXd Sigma;  // n x n, sigma sigma'
    Eigen::VectorXd nu;     // n
    Eigen::MatrixXd C;      // m x d
    Eigen::VectorXd rho;    // d
    Eigen::MatrixXd D;      // m x m, sqrt(1_m - rho'rho CC')
    Eigen::MatrixXd Theta;  // m x m
};

/// Every coefficient of the HJB operator at one state point. The quadratic
/// forms A and Abar are materialized twice: on the full d^2 index-pair
/// space (used for contractions) and on the d(d+1)/2-dimensional svec
/// space (used to test positive definiteness by eigenvalues).
struct OperatorCoeffs {
    StateCoeffs state;
    MarketCoeffs market;
    Eigen::MatrixXd A;          // d^2 x d^2
    Eigen::MatrixXd Abar;       // d^2 x d^2
    Eigen::MatrixXd bbar;       // d x d
    double V = 0.0;
    Eigen::MatrixXd A_svec;     // ns x ns
    Eigen::MatrixXd Abar_svec;  // ns x ns
};

inline int pair_index(int i, int j, int d) { return i * d + j; }

/// Scalar short rate r(x) = r0 + Tr(r1 x).
double eval_rate(const ModelSpec& spec, const Eigen::MatrixXd& x);

StateCoeffs eval_state_coeffs(const ModelSpec& spec, const SpdMatrix& x);

/// H_delta(x; b) = Tr(b x^-1) - (1+delta) Tr(f x^-1 g x^-1)
///                 - Tr(f x^-1) Tr(g x^-1),
/// with the drift replaced by drift_override when supplied.
double eval_H_delta(const ModelSpec& spec, const SpdMatrix& x, double delta,
                    const std::optional<Eigen::MatrixXd>& drift_override = {});

MarketCoeffs eval_market(const ModelSpec& spec, const SpdMatrix& x);

OperatorCoeffs eval_operator_coeffs(const ModelSpec& spec, const SpdMatrix& x);

/// Semi-linear operator value at a supplied gradient/Hessian:
///   1/2 sum A : hess + sum bbar : grad + 1/2 grad . Abar . grad + V.
/// The Hessian, when present, is given in svec coordinates (same
/// convention as OperatorCoeffs::A_svec).
double eval_F(const ModelSpec& spec, const SpdMatrix& x, const SymMatrix& grad,
              const std::optional<Eigen::MatrixXd>& hess_svec = {});

/// Optimal portfolio map for a given value-function gradient.
Eigen::VectorXd eval_pi(const ModelSpec& spec, const SpdMatrix& x,
                        const SymMatrix& grad);

/// Dual risk premium eta_kl = sum_ij a^{ij}_kl grad_ij.
Eigen::MatrixXd eval_eta(const ModelSpec& spec, const SpdMatrix& x,
                         const SymMatrix& grad);

/// sum theta_ij Tr(a^{ij} (a^{kl})') theta_kl  ( = 4 Tr(f theta g theta) ).
double ellipticity_form(const ModelSpec& spec, const SpdMatrix& x,
                        const SymMatrix& theta);

/// Sandwich constants bounding the Abar form by the A form for a given p.
void kappa_constants(double p, double& kappa_lower, double& kappa_upper);

}  // namespace longrun
