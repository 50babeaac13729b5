#include "longrun/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace longrun {

namespace {

Eigen::MatrixXd spd_sqrt_dense(const Eigen::MatrixXd& x) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x);
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
           es.eigenvectors().transpose();
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    // Square root of a PSD matrix; eigenvalues clipped at zero so boundary
    // cases of Assumption rho (rho'rho CC' = 1) stay well defined.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
           es.eigenvectors().transpose();
}

void check_square(const Eigen::MatrixXd& m, int d, const char* name) {
    if (m.rows() != d || m.cols() != d) {
        std::ostringstream oss;
        oss << "ModelSpec: " << name << " must be " << d << "x" << d << ", got "
            << m.rows() << "x" << m.cols();
        throw std::invalid_argument(oss.str());
    }
}

}  // namespace

MatrixProvider constant_provider(const Eigen::MatrixXd& value) {
    return [value](const Eigen::MatrixXd&) { return value; };
}

void kappa_constants(double p, double& kappa_lower, double& kappa_upper) {
    const double q = p / (p - 1.0);
    if (p < 0.0) {
        kappa_lower = 1.0 - q;
        kappa_upper = 1.0;
    } else {
        kappa_lower = 1.0;
        kappa_upper = 1.0 - q;
    }
}

int ModelSpec::dim() const {
    if (auto* w = std::get_if<WishartParams>(&state)) return w->d;
    return std::get<GeneralStateCoeffs>(state).d;
}

namespace {

void validate_market(MarketParams& market, int d) {
    if (!(market.p < 1.0) || market.p == 0.0) {
        throw std::invalid_argument("ModelSpec: need p < 1 and p != 0");
    }
    market.q = market.p / (market.p - 1.0);
    check_square(market.r1, d, "r1");
    if (!market.zeta) market.zeta = constant_provider(Eigen::MatrixXd::Ones(market.n, d));
    if (!market.nu) market.nu = constant_provider(Eigen::MatrixXd::Zero(market.n, 1));
    if (!market.rho) market.rho = constant_provider(Eigen::MatrixXd::Zero(d, 1));
    if (!market.corrC) market.corrC = constant_provider(Eigen::MatrixXd::Identity(market.m, d));
}

}  // namespace

ModelSpec ModelSpec::wishart_model(WishartParams state, MarketParams market) {
    check_square(state.K, state.d, "K");
    check_square(state.L, state.d, "L");
    check_square(state.Lambda, state.d, "Lambda");
    market.m = state.d;
    market.corrC = constant_provider(Eigen::MatrixXd::Identity(state.d, state.d));
    market.sigma.reset();
    validate_market(market, state.d);
    ModelSpec spec{std::move(state), std::move(market), 1.0, 1.0};
    kappa_constants(spec.market.p, spec.kappa_lower, spec.kappa_upper);
    return spec;
}

ModelSpec ModelSpec::general_model(GeneralStateCoeffs state, MarketParams market) {
    if (!state.b || !state.F || !state.G) {
        throw std::invalid_argument("ModelSpec: general state needs b, F, G providers");
    }
    validate_market(market, state.d);
    ModelSpec spec{std::move(state), std::move(market), 1.0, 1.0};
    kappa_constants(spec.market.p, spec.kappa_lower, spec.kappa_upper);
    return spec;
}

double eval_rate(const ModelSpec& spec, const Eigen::MatrixXd& x) {
    return spec.market.r0 + (spec.market.r1 * x).trace();
}

StateCoeffs eval_state_coeffs(const ModelSpec& spec, const SpdMatrix& x) {
    const int d = spec.dim();
    const Eigen::MatrixXd xd = x.dense();
    StateCoeffs out;
    Eigen::MatrixXd F, G;
    if (auto* w = spec.wishart()) {
        F = spd_sqrt_dense(xd);
        G = w->Lambda.transpose();
        out.b = w->L * w->L.transpose() + w->K * xd + xd * w->K.transpose();
    } else {
        auto& gen = std::get<GeneralStateCoeffs>(spec.state);
        F = gen.F(xd);
        G = gen.G(xd);
        out.b = gen.b(xd);
    }
    out.f = F * F.transpose();
    out.g = G.transpose() * G;
    out.a.assign(d, std::vector<Eigen::MatrixXd>(d));
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            Eigen::MatrixXd a(d, d);
            for (int k = 0; k < d; ++k) {
                for (int l = 0; l < d; ++l) {
                    a(k, l) = F(i, k) * G(l, j) + F(j, k) * G(l, i);
                }
            }
            out.a[i][j] = std::move(a);
        }
    }
    return out;
}

double eval_H_delta(const ModelSpec& spec, const SpdMatrix& x, double delta,
                    const std::optional<Eigen::MatrixXd>& drift_override) {
    StateCoeffs c = eval_state_coeffs(spec, x);
    const Eigen::MatrixXd& b = drift_override ? *drift_override : c.b;
    Eigen::LLT<Eigen::MatrixXd> llt(x.dense());
    if (llt.info() != Eigen::Success) {
        throw std::runtime_error("eval_H_delta: state matrix numerically singular");
    }
    const Eigen::MatrixXd xinv = llt.solve(Eigen::MatrixXd::Identity(x.dim(), x.dim()));
    const double t1 = (b * xinv).trace();
    const double t2 = (c.f * xinv * c.g * xinv).trace();
    const double t3 = (c.f * xinv).trace() * (c.g * xinv).trace();
    return t1 - (1.0 + delta) * t2 - t3;
}

MarketCoeffs eval_market(const ModelSpec& spec, const SpdMatrix& x) {
    const auto& mk = spec.market;
    const Eigen::MatrixXd xd = x.dense();
    MarketCoeffs out;
    if (mk.sigma) {
        out.sigma = (*mk.sigma)(xd);
    } else {
        if (mk.m != spec.dim()) {
            throw std::invalid_argument(
                "eval_market: default sigma = zeta sqrt(x) needs m == d; supply "
                "an explicit sigma provider for m != d");
        }
        out.sigma = mk.zeta(xd) * spd_sqrt_dense(xd);
    }
    if (out.sigma.rows() != mk.n || out.sigma.cols() != mk.m) {
        throw std::invalid_argument("eval_market: sigma has wrong dimensions");
    }
    out.Sigma = out.sigma * out.sigma.transpose();
    out.nu = mk.nu(xd);
    out.C = mk.corrC(xd);
    out.rho = mk.rho(xd);

    if (mk.m >= mk.n) {
        Eigen::LLT<Eigen::MatrixXd> llt(out.Sigma);
        if (llt.info() != Eigen::Success) {
            throw std::runtime_error(
                "eval_market: Sigma singular (ellipticity violation for m >= n)");
        }
        if (mk.m > mk.n) {
            out.Theta = out.sigma.transpose() * llt.solve(out.sigma);
        } else {
            out.Theta = Eigen::MatrixXd::Identity(mk.m, mk.m);
        }
    } else {
        Eigen::LLT<Eigen::MatrixXd> llt(out.sigma.transpose() * out.sigma);
        if (llt.info() != Eigen::Success) {
            throw std::runtime_error(
                "eval_market: sigma'sigma singular (ellipticity violation for m < n)");
        }
        out.Theta = Eigen::MatrixXd::Identity(mk.m, mk.m);
    }

    const double rho2 = out.rho.squaredNorm();
    out.D = psd_sqrt(Eigen::MatrixXd::Identity(mk.m, mk.m) -
                     rho2 * out.C * out.C.transpose());
    return out;
}

OperatorCoeffs eval_operator_coeffs(const ModelSpec& spec, const SpdMatrix& x) {
    const int d = spec.dim();
    const double q = spec.market.q;
    OperatorCoeffs out;
    out.state = eval_state_coeffs(spec, x);
    out.market = eval_market(spec, x);

    const int np = d * d;
    // w_ij = C a^{ij} rho, the correlated-noise loading of each entry pair
    std::vector<Eigen::VectorXd> w(np);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            w[pair_index(i, j, d)] = out.market.C * out.state.a[i][j] * out.market.rho;
        }
    }

    out.A.resize(np, np);
    out.Abar.resize(np, np);
    for (int p1 = 0; p1 < np; ++p1) {
        const int i = p1 / d, j = p1 % d;
        for (int p2 = p1; p2 < np; ++p2) {
            const int k = p2 / d, l = p2 % d;
            const double a_val =
                (out.state.a[i][j] * out.state.a[k][l].transpose()).trace();
            const double corr = w[p1].dot(out.market.Theta * w[p2]);
            out.A(p1, p2) = a_val;
            out.A(p2, p1) = a_val;
            out.Abar(p1, p2) = a_val - q * corr;
            out.Abar(p2, p1) = out.Abar(p1, p2);
        }
    }

    const Eigen::VectorXd sigma_nu = out.market.sigma.transpose() * out.market.nu;
    out.bbar.resize(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            out.bbar(i, j) =
                out.state.b(i, j) - q * sigma_nu.dot(w[pair_index(i, j, d)]);
        }
    }

    out.V = spec.market.p * eval_rate(spec, x.dense()) -
            0.5 * q * out.market.nu.dot(out.market.Sigma * out.market.nu);

    // svec-space materializations of the two quadratic forms
    const int ns = svec_size(d);
    out.A_svec.resize(ns, ns);
    out.Abar_svec.resize(ns, ns);
    std::vector<Eigen::VectorXd> basis(ns);
    {
        int idx = 0;
        const double inv_s2 = 1.0 / std::sqrt(2.0);
        for (int i = 0; i < d; ++i) {
            Eigen::VectorXd e = Eigen::VectorXd::Zero(np);
            e(pair_index(i, i, d)) = 1.0;
            basis[idx++] = e;
        }
        for (int i = 0; i < d; ++i) {
            for (int j = i + 1; j < d; ++j) {
                Eigen::VectorXd e = Eigen::VectorXd::Zero(np);
                e(pair_index(i, j, d)) = inv_s2;
                e(pair_index(j, i, d)) = inv_s2;
                basis[idx++] = e;
            }
        }
    }
    for (int p1 = 0; p1 < ns; ++p1) {
        for (int p2 = 0; p2 < ns; ++p2) {
            out.A_svec(p1, p2) = basis[p1].dot(out.A * basis[p2]);
            out.Abar_svec(p1, p2) = basis[p1].dot(out.Abar * basis[p2]);
        }
    }
    return out;
}

double eval_F(const ModelSpec& spec, const SpdMatrix& x, const SymMatrix& grad,
              const std::optional<Eigen::MatrixXd>& hess_svec) {
    OperatorCoeffs oc = eval_operator_coeffs(spec, x);
    const int d = spec.dim();
    double value = oc.V;
    if (hess_svec) {
        value += 0.5 * (oc.A_svec * (*hess_svec)).trace();
    }
    const Eigen::MatrixXd g = grad.dense();
    value += (oc.bbar.transpose() * g).trace();  // sum bbar_ij grad_ij
    Eigen::VectorXd gflat(d * d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) gflat(pair_index(i, j, d)) = g(i, j);
    }
    value += 0.5 * gflat.dot(oc.Abar * gflat);
    return value;
}

Eigen::MatrixXd eval_eta(const ModelSpec& spec, const SpdMatrix& x,
                         const SymMatrix& grad) {
    const int d = spec.dim();
    StateCoeffs sc = eval_state_coeffs(spec, x);
    Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) eta += sc.a[i][j] * grad(i, j);
    }
    return eta;
}

Eigen::VectorXd eval_pi(const ModelSpec& spec, const SpdMatrix& x,
                        const SymMatrix& grad) {
    const auto& mk = spec.market;
    MarketCoeffs mc = eval_market(spec, x);
    const Eigen::MatrixXd eta = eval_eta(spec, x, grad);
    const Eigen::VectorXd hedge = mc.C * eta * mc.rho;  // m-vector
    const double inv1mp = 1.0 / (1.0 - mk.p);
    if (mk.m > mk.n) {
        Eigen::LLT<Eigen::MatrixXd> llt(mc.Sigma);
        if (llt.info() != Eigen::Success) {
            throw std::runtime_error("eval_pi: Sigma singular");
        }
        return inv1mp * (mc.nu + llt.solve(mc.sigma * hedge));
    }
    Eigen::LLT<Eigen::MatrixXd> llt(mc.sigma.transpose() * mc.sigma);
    if (llt.info() != Eigen::Success) {
        throw std::runtime_error("eval_pi: sigma'sigma singular");
    }
    return inv1mp * (mc.sigma * llt.solve(mc.sigma.transpose() * mc.nu + hedge));
}

double ellipticity_form(const ModelSpec& spec, const SpdMatrix& x,
                        const SymMatrix& theta) {
    const int d = spec.dim();
    StateCoeffs sc = eval_state_coeffs(spec, x);
    // Y = sum_ij theta_ij a^{ij}; the form is Tr(Y Y')
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) y += sc.a[i][j] * theta(i, j);
    }
    return y.squaredNorm();
}

}  // namespace longrun
