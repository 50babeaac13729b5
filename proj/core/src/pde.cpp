#include "longrun/pde.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "longrun/assumptions.hpp"

namespace longrun {

namespace {

constexpr double kTheta = 1.0;  // Douglas correction weight

}  // namespace

std::shared_ptr<const Grid> Grid::make_d1(double x_min, double x_max, int n_nodes,
                                          int boundary_layer) {
    if (!(x_min > 0.0) || !(x_max > x_min) || n_nodes < 8) {
        throw std::invalid_argument("Grid::make_d1: bad axis specification");
    }
    auto g = std::make_shared<Grid>();
    g->mode_ = Mode::d1;
    g->n_[0] = n_nodes;
    g->lo_[0] = std::log(x_min);
    g->h_[0] = (std::log(x_max) - std::log(x_min)) / (n_nodes - 1);
    g->layer_ = boundary_layer;
    return g;
}

std::shared_ptr<const Grid> Grid::make_d2(double x_min, double x_max, int nx,
                                          int nz, int nc, double c_max,
                                          int boundary_layer) {
    if (!(x_min > 0.0) || !(x_max > x_min) || nx < 8 || nz < 8 || nc < 6 ||
        !(c_max > 0.0 && c_max < 1.0)) {
        throw std::invalid_argument("Grid::make_d2: bad axis specification");
    }
    auto g = std::make_shared<Grid>();
    g->mode_ = Mode::d2;
    g->n_[0] = nx;
    g->n_[1] = nz;
    g->n_[2] = nc;
    g->lo_[0] = std::sqrt(x_min);
    g->h_[0] = (std::sqrt(x_max) - std::sqrt(x_min)) / (nx - 1);
    g->lo_[1] = std::sqrt(x_min);
    g->h_[1] = (std::sqrt(x_max) - std::sqrt(x_min)) / (nz - 1);
    g->lo_[2] = -c_max;
    g->h_[2] = 2.0 * c_max / (nc - 1);
    g->layer_ = boundary_layer;
    return g;
}

int Grid::n_nodes() const { return n_[0] * n_[1] * n_[2]; }

int Grid::flatten(int i, int j, int k) const {
    return (i * n_[1] + j) * n_[2] + k;
}

void Grid::unflatten(int idx, int& i, int& j, int& k) const {
    k = idx % n_[2];
    idx /= n_[2];
    j = idx % n_[1];
    i = idx / n_[1];
}

Eigen::MatrixXd Grid::node_matrix(int idx) const {
    int i, j, k;
    unflatten(idx, i, j, k);
    if (mode_ == Mode::d1) {
        Eigen::MatrixXd x(1, 1);
        x(0, 0) = std::exp(axis_coord(0, i));
        return x;
    }
    const double s = axis_coord(0, i);
    const double t = axis_coord(1, j);
    const double c = axis_coord(2, k);
    Eigen::MatrixXd x(2, 2);
    x(0, 0) = s * s;
    x(0, 1) = c * s * t;
    x(1, 0) = x(0, 1);
    x(1, 1) = t * t;
    return x;
}

bool Grid::is_interior(int idx) const {
    // The layer is a physical margin: at least `layer_` spacings from every
    // face and at least 5% of the axis range, so the interior region does
    // not creep toward the truncation boundaries under mesh refinement.
    int i, j, k;
    unflatten(idx, i, j, k);
    const int axes[3] = {i, j, k};
    for (int a = 0; a < n_axes(); ++a) {
        const double range = h_[a] * (n_[a] - 1);
        const double margin = std::max(layer_ * h_[a], 0.05 * range);
        const double coord = axes[a] * h_[a];
        if (coord < margin - 1e-12 || coord > range - margin + 1e-12) return false;
    }
    return true;
}

int Grid::nearest_node(const Eigen::MatrixXd& x) const {
    auto clampi = [](double u, int n) {
        return std::min(n - 1, std::max(0, static_cast<int>(std::lround(u))));
    };
    if (mode_ == Mode::d1) {
        const double u = (std::log(x(0, 0)) - lo_[0]) / h_[0];
        return flatten(clampi(u, n_[0]));
    }
    const double s = std::sqrt(x(0, 0));
    const double t = std::sqrt(x(1, 1));
    const double c = x(0, 1) / (s * t);
    return flatten(clampi((s - lo_[0]) / h_[0], n_[0]),
                   clampi((t - lo_[1]) / h_[1], n_[1]),
                   clampi((c - lo_[2]) / h_[2], n_[2]));
}

namespace {

// Coordinate map derivatives at one node: J maps grid-coordinate gradients
// to matrix-entry derivatives, H[alpha] carries the coordinate Hessians
// entering the drift correction. Entry pairs are flattened row-major.
void coordinate_jacobians(const Grid& grid, int idx, Eigen::MatrixXd& J,
                          std::vector<Eigen::MatrixXd>& H) {
    if (grid.mode() == Grid::Mode::d1) {
        int i, j, k;
        grid.unflatten(idx, i, j, k);
        const double x = std::exp(grid.axis_coord(0, i));
        J.resize(1, 1);
        J(0, 0) = 1.0 / x;
        H.assign(1, Eigen::MatrixXd::Zero(1, 1));
        H[0](0, 0) = -1.0 / (x * x);
        return;
    }
    int i, j, k;
    grid.unflatten(idx, i, j, k);
    const double s = grid.axis_coord(0, i);
    const double t = grid.axis_coord(1, j);
    const double c = grid.axis_coord(2, k);
    J.setZero(4, 3);
    // pairs: 0 = (0,0), 1 = (0,1), 2 = (1,0), 3 = (1,1)
    J(0, 0) = 1.0 / (2.0 * s);
    J(3, 1) = 1.0 / (2.0 * t);
    J(0, 2) = -c / (2.0 * s * s);
    J(3, 2) = -c / (2.0 * t * t);
    J(1, 2) = 1.0 / (2.0 * s * t);
    J(2, 2) = 1.0 / (2.0 * s * t);

    H.assign(3, Eigen::MatrixXd::Zero(4, 4));
    H[0](0, 0) = -1.0 / (4.0 * s * s * s);
    H[1](3, 3) = -1.0 / (4.0 * t * t * t);
    Eigen::MatrixXd& Hc = H[2];
    Hc(0, 0) = 3.0 * c / (4.0 * s * s * s * s);
    Hc(3, 3) = 3.0 * c / (4.0 * t * t * t * t);
    Hc(0, 3) = Hc(3, 0) = c / (4.0 * s * s * t * t);
    Hc(0, 1) = Hc(1, 0) = Hc(0, 2) = Hc(2, 0) = -1.0 / (4.0 * s * s * s * t);
    Hc(3, 1) = Hc(1, 3) = Hc(3, 2) = Hc(2, 3) = -1.0 / (4.0 * s * t * t * t);
}

struct Assembled {
    int na = 1;
    // row-major per node: Atil/Ahat are na*na blocks, btil na, V scalar
    std::vector<double> Atil, btil, Ahat, V;
};

Assembled assemble_coefficients(const ModelSpec& spec, const Grid& grid) {
    const int na = grid.n_axes();
    const int nn = grid.n_nodes();
    const int d = grid.dim();
    const int np = d * d;
    Assembled out;
    out.na = na;
    out.Atil.assign(static_cast<size_t>(nn) * na * na, 0.0);
    out.Ahat.assign(static_cast<size_t>(nn) * na * na, 0.0);
    out.btil.assign(static_cast<size_t>(nn) * na, 0.0);
    out.V.assign(nn, 0.0);

    Eigen::MatrixXd J;
    std::vector<Eigen::MatrixXd> H;
    for (int idx = 0; idx < nn; ++idx) {
        const SpdMatrix x = SpdMatrix::from_dense(grid.node_matrix(idx));
        OperatorCoeffs oc = eval_operator_coeffs(spec, x);
        coordinate_jacobians(grid, idx, J, H);
        const Eigen::MatrixXd Atil = J.transpose() * oc.A * J;
        const Eigen::MatrixXd Ahat = J.transpose() * oc.Abar * J;
        Eigen::VectorXd bflat(np);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) bflat(pair_index(i, j, d)) = oc.bbar(i, j);
        for (int a = 0; a < na; ++a) {
            double drift = bflat.dot(J.col(a));
            drift += 0.5 * (oc.A.cwiseProduct(H[a])).sum();
            out.btil[static_cast<size_t>(idx) * na + a] = drift;
            for (int b = 0; b < na; ++b) {
                out.Atil[(static_cast<size_t>(idx) * na + a) * na + b] = Atil(a, b);
                out.Ahat[(static_cast<size_t>(idx) * na + a) * na + b] = Ahat(a, b);
            }
        }
        out.V[idx] = oc.V;
    }
    return out;
}

// Axis stencils with the linear-extrapolation (zero second normal
// difference) ghost closure: first derivatives become one-sided at the
// faces and pure second derivatives vanish there.
struct AxisGeometry {
    int stride = 1;
    int count = 1;
    int lines = 1;       // number of independent lines
    double h = 1.0;
};

AxisGeometry axis_geometry(const Grid& grid, int a) {
    AxisGeometry g;
    g.count = grid.axis_size(a);
    g.h = grid.axis_step(a);
    if (grid.mode() == Grid::Mode::d1) {
        g.stride = 1;
        g.lines = 1;
        return g;
    }
    const int n0 = grid.axis_size(0), n1 = grid.axis_size(1), n2 = grid.axis_size(2);
    if (a == 0) g.stride = n1 * n2;
    if (a == 1) g.stride = n2;
    if (a == 2) g.stride = 1;
    g.lines = n0 * n1 * n2 / g.count;
    return g;
}

// Visits every line of an axis: base index of the line plus its stride.
template <typename F>
void for_each_line(const Grid& grid, int a, F&& f) {
    const AxisGeometry g = axis_geometry(grid, a);
    if (grid.mode() == Grid::Mode::d1) {
        f(0, g.stride, g.count, g.h);
        return;
    }
    const int n0 = grid.axis_size(0), n1 = grid.axis_size(1), n2 = grid.axis_size(2);
    if (a == 0) {
        for (int j = 0; j < n1; ++j)
            for (int k = 0; k < n2; ++k) f(j * n2 + k, g.stride, g.count, g.h);
    } else if (a == 1) {
        for (int i = 0; i < n0; ++i)
            for (int k = 0; k < n2; ++k) f(i * n1 * n2 + k, g.stride, g.count, g.h);
    } else {
        for (int i = 0; i < n0; ++i)
            for (int j = 0; j < n1; ++j) f((i * n1 + j) * n2, g.stride, g.count, g.h);
    }
}

void first_derivative(const Grid& grid, int a, const Eigen::VectorXd& v,
                      Eigen::VectorXd& out) {
    for_each_line(grid, a, [&](int base, int stride, int count, double h) {
        out(base) = (v(base + stride) - v(base)) / h;
        for (int i = 1; i + 1 < count; ++i) {
            const int idx = base + i * stride;
            out(idx) = (v(idx + stride) - v(idx - stride)) / (2.0 * h);
        }
        const int last = base + (count - 1) * stride;
        out(last) = (v(last) - v(last - stride)) / h;
    });
}

void second_derivative(const Grid& grid, int a, const Eigen::VectorXd& v,
                       Eigen::VectorXd& out) {
    for_each_line(grid, a, [&](int base, int stride, int count, double h) {
        out(base) = 0.0;  // ghost closure: zero second normal difference
        const double inv_h2 = 1.0 / (h * h);
        for (int i = 1; i + 1 < count; ++i) {
            const int idx = base + i * stride;
            out(idx) = (v(idx + stride) - 2.0 * v(idx) + v(idx - stride)) * inv_h2;
        }
        out(base + (count - 1) * stride) = 0.0;
    });
}

struct Workspace {
    std::vector<Eigen::VectorXd> grad;    // na first-derivative fields
    std::vector<Eigen::VectorXd> second;  // na pure second-derivative fields
    std::vector<Eigen::VectorXd> mixed;   // fields for pairs (a<b)
    Eigen::VectorXd tmp;

    void resize(int na, int nn) {
        grad.assign(na, Eigen::VectorXd::Zero(nn));
        second.assign(na, Eigen::VectorXd::Zero(nn));
        mixed.assign(na * (na - 1) / 2, Eigen::VectorXd::Zero(nn));
        tmp.resize(nn);
    }
};

// Full discrete spatial operator: fills ws with the stencil fields and
// returns the nodewise value of F[v].
void apply_full_operator(const Assembled& cf, const Grid& grid,
                         const Eigen::VectorXd& v, Workspace& ws,
                         Eigen::VectorXd& out) {
    const int na = cf.na;
    const int nn = grid.n_nodes();
    for (int a = 0; a < na; ++a) {
        first_derivative(grid, a, v, ws.grad[a]);
        second_derivative(grid, a, v, ws.second[a]);
    }
    int pair = 0;
    for (int a = 0; a < na; ++a) {
        for (int b = a + 1; b < na; ++b, ++pair) {
            first_derivative(grid, a, ws.grad[b], ws.mixed[pair]);
        }
    }
    for (int idx = 0; idx < nn; ++idx) {
        const size_t ia = static_cast<size_t>(idx) * na;
        const size_t im = ia * na;
        double val = cf.V[idx];
        double quad = 0.0;
        for (int a = 0; a < na; ++a) {
            val += 0.5 * cf.Atil[im + a * na + a] * ws.second[a](idx);
            val += cf.btil[ia + a] * ws.grad[a](idx);
            for (int b = 0; b < na; ++b) {
                quad += ws.grad[a](idx) * cf.Ahat[im + a * na + b] * ws.grad[b](idx);
            }
        }
        int pr = 0;
        for (int a = 0; a < na; ++a) {
            for (int b = a + 1; b < na; ++b, ++pr) {
                val += cf.Atil[im + a * na + b] * ws.mixed[pr](idx);
            }
        }
        out(idx) = val + 0.5 * quad;
    }
}

// Implicit per-axis operator L_a v = (Atil_aa/2) v_aa + btil_a v_a and its
// prefactored tridiagonal solver for (I - theta dt L_a).
struct AxisSolver {
    int axis = 0;
    std::vector<double> sub, dia, sup;     // rows of I - theta dt L_a
    std::vector<double> mult, pivot;       // Thomas factorization
    double dt = -1.0;

    void build(const Assembled& cf, const Grid& grid, int a, double theta_dt) {
        axis = a;
        const int na = cf.na;
        const int nn = grid.n_nodes();
        sub.assign(nn, 0.0);
        dia.assign(nn, 1.0);
        sup.assign(nn, 0.0);
        for_each_line(grid, a, [&](int base, int stride, int count, double h) {
            for (int i = 0; i < count; ++i) {
                const int idx = base + i * stride;
                const double A2 =
                    0.5 * cf.Atil[(static_cast<size_t>(idx) * na + a) * na + a];
                const double B1 = cf.btil[static_cast<size_t>(idx) * na + a];
                double l = 0.0, d = 0.0, u = 0.0;
                if (i == 0) {
                    d = -B1 / h;
                    u = B1 / h;
                } else if (i == count - 1) {
                    l = -B1 / h;
                    d = B1 / h;
                } else {
                    l = A2 / (h * h) - B1 / (2.0 * h);
                    d = -2.0 * A2 / (h * h);
                    u = A2 / (h * h) + B1 / (2.0 * h);
                }
                sub[idx] = -theta_dt * l;
                dia[idx] = 1.0 - theta_dt * d;
                sup[idx] = -theta_dt * u;
            }
        });
        factor(grid);
    }

    void factor(const Grid& grid) {
        mult.assign(sub.size(), 0.0);
        pivot.assign(sub.size(), 1.0);
        for_each_line(grid, axis, [&](int base, int stride, int count, double) {
            pivot[base] = dia[base];
            for (int i = 1; i < count; ++i) {
                const int idx = base + i * stride;
                const int prev = idx - stride;
                mult[idx] = sub[idx] / pivot[prev];
                pivot[idx] = dia[idx] - mult[idx] * sup[prev];
            }
        });
    }

    void solve(const Grid& grid, Eigen::VectorXd& rhs) const {
        for_each_line(grid, axis, [&](int base, int stride, int count, double) {
            for (int i = 1; i < count; ++i) {
                const int idx = base + i * stride;
                rhs(idx) -= mult[idx] * rhs(idx - stride);
            }
            const int last = base + (count - 1) * stride;
            rhs(last) /= pivot[last];
            for (int i = count - 2; i >= 0; --i) {
                const int idx = base + i * stride;
                rhs(idx) = (rhs(idx) - sup[idx] * rhs(idx + stride)) / pivot[idx];
            }
        });
    }

    // L_a v from already-computed stencil fields.
    void apply(const Assembled& cf, const Grid& grid, const Workspace& ws,
               Eigen::VectorXd& out) const {
        const int na = cf.na;
        const int nn = grid.n_nodes();
        for (int idx = 0; idx < nn; ++idx) {
            const double A2 =
                0.5 * cf.Atil[(static_cast<size_t>(idx) * na + axis) * na + axis];
            out(idx) = A2 * ws.second[axis](idx) +
                       cf.btil[static_cast<size_t>(idx) * na + axis] *
                           ws.grad[axis](idx);
        }
    }
};

double preflight_bound(const Assembled& cf, const Grid& grid) {
    const int na = cf.na;
    double worst = 0.0;
    for (int idx = 0; idx < grid.n_nodes(); ++idx) {
        double s = 1e-12;
        for (int a = 0; a < na; ++a) {
            for (int b = a + 1; b < na; ++b) {
                s += 2.0 *
                     std::abs(cf.Atil[(static_cast<size_t>(idx) * na + a) * na + b]) /
                     (grid.axis_step(a) * grid.axis_step(b));
            }
        }
        worst = std::max(worst, s);
    }
    return 0.9 / worst;
}

}  // namespace

std::vector<Eigen::MatrixXd> surface_gradients(const Grid& grid,
                                               const Eigen::VectorXd& values) {
    const int na = grid.n_axes();
    const int d = grid.dim();
    std::vector<Eigen::VectorXd> g(na, Eigen::VectorXd::Zero(grid.n_nodes()));
    for (int a = 0; a < na; ++a) first_derivative(grid, a, values, g[a]);

    std::vector<Eigen::MatrixXd> out(grid.n_nodes());
    Eigen::MatrixXd J;
    std::vector<Eigen::MatrixXd> H;
    for (int idx = 0; idx < grid.n_nodes(); ++idx) {
        coordinate_jacobians(grid, idx, J, H);
        Eigen::VectorXd gu(na);
        for (int a = 0; a < na; ++a) gu(a) = g[a](idx);
        const Eigen::VectorXd entry = J * gu;  // d^2 flattened derivatives
        Eigen::MatrixXd m(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) m(i, j) = entry(pair_index(i, j, d));
        out[idx] = 0.5 * (m + m.transpose());
    }
    return out;
}

Eigen::VectorXd apply_operator(const ModelSpec& spec, const Grid& grid,
                               const Eigen::VectorXd& values) {
    if (values.size() != grid.n_nodes()) {
        throw std::invalid_argument("apply_operator: field size mismatch");
    }
    Assembled cf = assemble_coefficients(spec, grid);
    Workspace ws;
    ws.resize(cf.na, grid.n_nodes());
    Eigen::VectorXd out(grid.n_nodes());
    apply_full_operator(cf, grid, values, ws, out);
    return out;
}

CauchyResult solve_cauchy(const ModelSpec& spec, std::shared_ptr<const Grid> grid,
                          const CauchyOptions& options) {
    if (!(options.T >= 0.0) || !(options.dt > 0.0)) {
        throw std::invalid_argument("solve_cauchy: need T >= 0 and dt > 0");
    }
    CauchyResult result;
    if (options.precheck_master) {
        SampleMesh large = SampleMesh::standard(spec.dim());
        SampleMesh small = SampleMesh::small_determinant(spec.dim());
        CheckReport master = check_master(spec, large, small);
        result.master_check_passed = master.passed();
        if (!result.master_check_passed && !options.override_precheck) {
            throw std::invalid_argument(
                "solve_cauchy precondition failed: master coefficient check (" +
                master.summary + ")");
        }
    }

    const Assembled cf = assemble_coefficients(spec, *grid);
    result.preflight_dt_bound = preflight_bound(cf, *grid);

    const int na = cf.na;
    const int nn = grid->n_nodes();
    Workspace ws;
    ws.resize(na, nn);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(nn);
    Eigen::VectorXd fv(nn), rhs(nn), la_v(nn);

    std::vector<double> stops = options.snapshot_times;
    stops.push_back(options.T);
    std::sort(stops.begin(), stops.end());
    stops.erase(std::unique(stops.begin(), stops.end(),
                            [](double a, double b) { return std::abs(a - b) < 1e-12; }),
                stops.end());

    std::vector<AxisSolver> solvers(na);
    double dt_cur = options.dt;
    auto refactor = [&](double dt) {
        for (int a = 0; a < na; ++a) solvers[a].build(cf, *grid, a, kTheta * dt);
    };
    refactor(dt_cur);
    double factored_dt = dt_cur;

    double t = 0.0;
    int halvings = 0;
    for (double stop : stops) {
        if (stop < 1e-15) {
            result.snapshots.push_back(ValueSurface{grid, 0.0, v});
            continue;
        }
        while (t < stop - 1e-12) {
            const double step = std::min(dt_cur, stop - t);
            if (step != factored_dt) {
                refactor(step);
                factored_dt = step;
            }
            // explicit stage + Douglas sweeps
            apply_full_operator(cf, *grid, v, ws, fv);
            rhs = v + step * fv;  // Y0
            for (int a = 0; a < na; ++a) {
                solvers[a].apply(cf, *grid, ws, la_v);
                rhs -= kTheta * step * la_v;
                solvers[a].solve(*grid, rhs);
            }
            if (!rhs.allFinite()) {
                if (++halvings > options.max_dt_halvings) {
                    std::ostringstream oss;
                    oss << "solve_cauchy: step rejected " << halvings
                        << " times; aborting at t = " << t << " with dt = " << dt_cur;
                    throw std::runtime_error(oss.str());
                }
                dt_cur *= 0.5;
                continue;  // retry from the same v
            }
            v = rhs;
            t += step;
        }
        result.snapshots.push_back(ValueSurface{grid, stop, v});
    }
    result.dt_used = dt_cur;
    result.halvings = halvings;
    return result;
}

ErgodicPairEstimate extract_ergodic(const ValueSurface& earlier,
                                    const ValueSurface& later, int ref_node) {
    if (earlier.grid != later.grid) {
        throw std::invalid_argument("extract_ergodic: surfaces on different grids");
    }
    const double delta = later.T - earlier.T;
    if (!(delta > 0.0)) {
        throw std::invalid_argument("extract_ergodic: need T_later > T_earlier");
    }
    ErgodicPairEstimate est;
    est.ref_node = ref_node;
    est.lambda = (later.values(ref_node) - earlier.values(ref_node)) / delta;
    est.vhat = later.values.array() - later.values(ref_node);
    return est;
}

namespace {

bool node_in_box(const Grid& grid, int idx, const DiagnosticBox& box) {
    const Eigen::MatrixXd X = grid.node_matrix(idx);
    if (grid.mode() == Grid::Mode::d1) {
        return X(0, 0) >= box.x_lo && X(0, 0) <= box.x_hi;
    }
    const double s = std::sqrt(X(0, 0)), t = std::sqrt(X(1, 1));
    const double c = X(0, 1) / (s * t);
    return X(0, 0) >= box.x_lo && X(0, 0) <= box.x_hi && X(1, 1) >= box.z_lo &&
           X(1, 1) <= box.z_hi && std::abs(c) <= box.c_abs;
}

}  // namespace

std::vector<HDiagnosticsRow> compute_h(const ModelSpec& spec,
                                       const std::vector<ValueSurface>& surfaces,
                                       const ErgodicPairEstimate& ergodic,
                                       const DiagnosticBox& box) {
    if (surfaces.empty()) return {};
    const Grid& grid = *surfaces.front().grid;
    const auto vhat_grad = surface_gradients(grid, ergodic.vhat);

    std::vector<int> box_nodes;
    for (int idx = 0; idx < grid.n_nodes(); ++idx) {
        if (node_in_box(grid, idx, box)) box_nodes.push_back(idx);
    }
    if (box_nodes.empty()) {
        throw std::invalid_argument("compute_h: diagnostic box contains no nodes");
    }

    std::vector<Eigen::VectorXd> pihat(box_nodes.size());
    for (size_t b = 0; b < box_nodes.size(); ++b) {
        const int idx = box_nodes[b];
        pihat[b] = eval_pi(spec, SpdMatrix::from_dense(grid.node_matrix(idx)),
                           SymMatrix::from_dense(vhat_grad[idx]));
    }

    std::vector<HDiagnosticsRow> rows;
    for (const ValueSurface& surf : surfaces) {
        HDiagnosticsRow row;
        row.T = surf.T;
        Eigen::VectorXd h =
            surf.values.array() - ergodic.lambda * surf.T - ergodic.vhat.array();
        const double href = h(ergodic.ref_node);
        const auto v_grad = surface_gradients(grid, surf.values);
        for (size_t b = 0; b < box_nodes.size(); ++b) {
            const int idx = box_nodes[b];
            row.h_oscillation = std::max(row.h_oscillation, std::abs(h(idx) - href));
            row.grad_h_sup =
                std::max(row.grad_h_sup, (v_grad[idx] - vhat_grad[idx]).norm());
            const Eigen::VectorXd pi =
                eval_pi(spec, SpdMatrix::from_dense(grid.node_matrix(idx)),
                        SymMatrix::from_dense(v_grad[idx]));
            row.policy_distance =
                std::max(row.policy_distance, (pi - pihat[b]).norm());
        }
        rows.push_back(row);
    }
    return rows;
}

double max_c_curvature(const Grid& grid, const Eigen::VectorXd& values,
                       const DiagnosticBox& box) {
    if (grid.mode() != Grid::Mode::d2) {
        throw std::invalid_argument("max_c_curvature: d2 grid required");
    }
    Eigen::VectorXd vcc(grid.n_nodes());
    second_derivative(grid, 2, values, vcc);
    double worst = 0.0;
    for (int idx = 0; idx < grid.n_nodes(); ++idx) {
        if (!grid.is_interior(idx) || !node_in_box(grid, idx, box)) continue;
        worst = std::max(worst, std::abs(vcc(idx)));
    }
    return worst;
}

GradMap make_surface_grad_map(std::shared_ptr<const Grid> grid,
                              const Eigen::VectorXd& values,
                              std::shared_ptr<std::atomic<long>> excursions) {
    auto grads = std::make_shared<std::vector<Eigen::MatrixXd>>(
        surface_gradients(*grid, values));
    return [grid, grads, excursions](double, const Eigen::MatrixXd& X) {
        const int na = grid->n_axes();
        double coord[3] = {0, 0, 0};
        if (grid->mode() == Grid::Mode::d1) {
            coord[0] = std::log(X(0, 0));
        } else {
            const double s = std::sqrt(X(0, 0));
            const double t = std::sqrt(X(1, 1));
            coord[0] = s;
            coord[1] = t;
            coord[2] = X(0, 1) / (s * t);
        }
        double frac[3] = {0, 0, 0};
        int base[3] = {0, 0, 0};
        bool outside = false;
        for (int a = 0; a < na; ++a) {
            const int n = grid->axis_size(a);
            double u = (coord[a] - grid->axis_coord(a, 0)) / grid->axis_step(a);
            if (u < 0.0 || u > n - 1) outside = true;
            u = std::min(static_cast<double>(n - 1), std::max(0.0, u));
            base[a] = std::min(n - 2, static_cast<int>(u));
            frac[a] = u - base[a];
        }
        if (outside && excursions) excursions->fetch_add(1);
        const int d = grid->dim();
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d, d);
        if (grid->mode() == Grid::Mode::d1) {
            const int i0 = grid->flatten(base[0]);
            const int i1 = grid->flatten(base[0] + 1);
            out = (1.0 - frac[0]) * (*grads)[i0] + frac[0] * (*grads)[i1];
            return out;
        }
        for (int di = 0; di < 2; ++di) {
            for (int dj = 0; dj < 2; ++dj) {
                for (int dk = 0; dk < 2; ++dk) {
                    const double w = (di ? frac[0] : 1.0 - frac[0]) *
                                     (dj ? frac[1] : 1.0 - frac[1]) *
                                     (dk ? frac[2] : 1.0 - frac[2]);
                    out += w * (*grads)[grid->flatten(base[0] + di, base[1] + dj,
                                                      base[2] + dk)];
                }
            }
        }
        return out;
    };
}

}  // namespace longrun
