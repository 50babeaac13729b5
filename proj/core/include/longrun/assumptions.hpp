#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "longrun/model.hpp"

namespace longrun {

struct CheckWitness {
    Eigen::MatrixXd x;      // offending state point (empty when structural)
    std::string quantity;   // violated quantity
    double value = 0.0;
};

/// Machine verdict for one parameter restriction. A fail always carries a
/// witness; a certified pass means the margin came from a closed form
/// rather than mesh sampling.
struct CheckReport {
    enum class Verdict { pass, fail, indeterminate };

    std::string name;
    Verdict verdict = Verdict::indeterminate;
    bool certified = false;
    std::map<std::string, double> details;
    std::optional<CheckWitness> witness;
    std::string summary;

    bool passed() const { return verdict == Verdict::pass; }
};

std::string to_string(CheckReport::Verdict v);

/// Evaluation meshes for the sampling-based checks. `standard` spans
/// geometric norm levels times random unit-norm SPD directions;
/// `small_determinant` pins the smallest eigenvalue to a geometric grid
/// while the remaining spectrum stays order one.
struct SampleMesh {
    std::vector<SpdMatrix> points;

    static SampleMesh standard(int dim, unsigned seed = 99, int n_levels = 24,
                               int n_directions = 50, double level_min = 1e-2,
                               double level_max = 1e4);
    static SampleMesh small_determinant(int dim, unsigned seed = 101,
                                        int n_levels = 13, int n_directions = 20,
                                        double eig_min = 1e-8,
                                        double eig_max = 1e-2);
    /// Smallest-eigenvalue level of each point (small_determinant only).
    std::vector<double> levels;
};

/// Well-posedness of the state SDE: Wishart closed-form eigenvalue test of
/// LL' >= (d+1) Lambda Lambda' > 0, otherwise sampled inf of H_0(x; b) and
/// the Kronecker growth ratio Tr(f)Tr(g)/(1+||x||^2).
CheckReport check_wellposedness(const ModelSpec& spec, bool force_sampled = false);

/// Nondegeneracy of f, g and the zeta-form branch picked by sign(d - n).
CheckReport check_ellipticity(const ModelSpec& spec, const SampleMesh& mesh);

/// rho'rho CC' <= 1_m over the mesh (strict: < 1 with reported gap).
CheckReport check_correlation(const ModelSpec& spec, const SampleMesh& mesh,
                              bool strict);

/// The explicit Wishart parameter restrictions: strict well-posedness,
/// and per-sign-of-p either the decaying-potential or mean-reversion
/// alternative, including the epsilon^2 condition for 0 < p < 1.
CheckReport check_prop_wishart(const ModelSpec& spec, bool force_sampled = false);

/// The full coefficient master list: fitted growth/mean-reversion/potential
/// constants with the 5-branch verdict, plus the small-determinant parts
/// A), B), C) with searched epsilon, c0, c1.
CheckReport check_master(const ModelSpec& spec, const SampleMesh& large_mesh,
                         const SampleMesh& small_det_mesh,
                         bool force_sampled = false);

/// Turnpike ratio R(x) = U'(x) / x^(p-1) -> 1 on a geometric wealth grid,
/// plus boundedness of the short rate over a state mesh.
CheckReport check_turnpike_ratio(const std::function<double(double)>& marginal_utility,
                                 double p, const ModelSpec& spec,
                                 const SampleMesh& state_mesh,
                                 double wealth_max = 1e6, int n_grid = 61,
                                 double tol = 2e-3);

/// The battery run by the CLI `check` task.
std::vector<CheckReport> run_all_checks(const ModelSpec& spec,
                                        bool strict_correlation);

}  // namespace longrun
