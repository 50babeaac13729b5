#pragma once

#include <atomic>
#include <memory>
#include <vector>

#include "longrun/model.hpp"
#include "longrun/simulate.hpp"

namespace longrun {

/// Finite-difference grid over the SPD cone.
///
/// d1 mode: one axis, u = log x uniform on [log x_min, log x_max].
/// d2 mode: axes (s, t, c) with s = sqrt(x), t = sqrt(z) uniform and c the
/// correlation, X = [[s^2, c s t], [c s t, t^2]]. Uniform sqrt spacing makes
/// every stencil derivative of an affine-in-X function exact (such
/// functions are quadratic polynomials in (s, t) and linear in c), which
/// pins the chain-rule recovery of matrix gradients at rounding level.
class Grid {
public:
    enum class Mode { d1, d2 };

    static std::shared_ptr<const Grid> make_d1(double x_min, double x_max,
                                               int n_nodes, int boundary_layer = 3);
    static std::shared_ptr<const Grid> make_d2(double x_min, double x_max,
                                               int nx, int nz, int nc,
                                               double c_max = 0.9,
                                               int boundary_layer = 2);

    Mode mode() const { return mode_; }
    int dim() const { return mode_ == Mode::d1 ? 1 : 2; }
    int n_axes() const { return mode_ == Mode::d1 ? 1 : 3; }
    int n_nodes() const;
    int axis_size(int a) const { return n_[a]; }
    double axis_step(int a) const { return h_[a]; }
    double axis_coord(int a, int i) const { return lo_[a] + i * h_[a]; }

    int flatten(int i, int j = 0, int k = 0) const;
    void unflatten(int idx, int& i, int& j, int& k) const;

    /// State matrix at a node.
    Eigen::MatrixXd node_matrix(int idx) const;
    /// Node at least boundary_layer layers away from every face.
    bool is_interior(int idx) const;
    int boundary_layer() const { return layer_; }
    /// Node closest to the given state matrix.
    int nearest_node(const Eigen::MatrixXd& x) const;

private:
    Mode mode_ = Mode::d1;
    int n_[3] = {1, 1, 1};
    double lo_[3] = {0, 0, 0};
    double h_[3] = {1, 1, 1};
    int layer_ = 1;
};

struct ValueSurface {
    std::shared_ptr<const Grid> grid;
    double T = 0.0;
    Eigen::VectorXd values;
};

/// Matrix-entry gradients D_(ij) v per node via chain rule from grid
/// stencil derivatives.
std::vector<Eigen::MatrixXd> surface_gradients(const Grid& grid,
                                               const Eigen::VectorXd& values);

/// Discrete application of the full spatial operator F (implicit+explicit
/// parts combined) to a nodal field; the workhorse of the explicit stage,
/// exposed for operator-consistency checks against eval_F.
Eigen::VectorXd apply_operator(const ModelSpec& spec, const Grid& grid,
                               const Eigen::VectorXd& values);

struct CauchyOptions {
    double T = 1.0;
    double dt = 1e-3;
    std::vector<double> snapshot_times;  // the final time is always included
    bool precheck_master = true;         // throw on failed master check ...
    bool override_precheck = false;      // ... unless overridden (warn-only)
    int max_dt_halvings = 10;
};

struct CauchyResult {
    std::vector<ValueSurface> snapshots;  // at requested times, ascending, then T
    double dt_used = 0.0;
    double preflight_dt_bound = 0.0;  // explicit-part parabolic estimate
    int halvings = 0;
    bool master_check_passed = true;
};

/// IMEX time stepping for v_t = F[v], v(0, .) = 0: axis-diagonal second
/// and first derivatives implicit (factored tridiagonal sweeps, Douglas
/// splitting in d2), mixed derivatives and the quadratic gradient term
/// plus potential explicit. Linear extrapolation (zero second normal
/// difference) closes the truncation boundaries.
CauchyResult solve_cauchy(const ModelSpec& spec, std::shared_ptr<const Grid> grid,
                          const CauchyOptions& options);

struct ErgodicPairEstimate {
    double lambda = 0.0;
    Eigen::VectorXd vhat;  // normalized to vhat(ref_node) = 0
    int ref_node = 0;
};

/// lambda = (v(T, x_ref) - v(T - Delta, x_ref)) / Delta and
/// vhat = v(T, .) - v(T, x_ref).
ErgodicPairEstimate extract_ergodic(const ValueSurface& earlier,
                                    const ValueSurface& later, int ref_node);

/// Compact evaluation box in natural coordinates; z/c fields ignored in d1.
struct DiagnosticBox {
    double x_lo = 0.5, x_hi = 5.0;
    double z_lo = 0.5, z_hi = 5.0;
    double c_abs = 0.5;
};

struct HDiagnosticsRow {
    double T = 0.0;
    double h_oscillation = 0.0;    // sup over box of |h - h(x_ref)|
    double grad_h_sup = 0.0;       // sup over box of ||grad h||_F
    double policy_distance = 0.0;  // sup over box of |pi(T,.) - pi_hat|
};

/// Long-horizon diagnostics h(T, x) = v(T, x) - lambda T - vhat(x) for each
/// supplied surface against the extracted ergodic pair.
std::vector<HDiagnosticsRow> compute_h(const ModelSpec& spec,
                                       const std::vector<ValueSurface>& surfaces,
                                       const ErgodicPairEstimate& ergodic,
                                       const DiagnosticBox& box);

/// Largest |second difference in c| over interior nodes inside the box;
/// the non-affineness witness for the d2 counter-example (affine values
/// are linear in c, so this sits at the discretization floor for them).
double max_c_curvature(const Grid& grid, const Eigen::VectorXd& values,
                       const DiagnosticBox& box);

/// Gradient provider interpolating precomputed node gradients (linear in
/// d1, trilinear in d2) with constant extrapolation outside the grid;
/// excursions outside are counted, not hidden.
GradMap make_surface_grad_map(std::shared_ptr<const Grid> grid,
                              const Eigen::VectorXd& values,
                              std::shared_ptr<std::atomic<long>> excursions = nullptr);

}  // namespace longrun
