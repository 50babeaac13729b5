#pragma once

#include <Eigen/Dense>
#include <vector>

namespace longrun {

/// Symmetric d x d matrix with canonical upper-triangle storage.
///
/// Entries (i,j) and (j,i) share one stored value, so the symmetry
/// invariant holds exactly rather than up to rounding.
class SymMatrix {
public:
    explicit SymMatrix(int dim);

    /// Builds from a dense matrix, symmetrizing as (m + m')/2.
    static SymMatrix from_dense(const Eigen::Ref<const Eigen::MatrixXd>& m);
    static SymMatrix identity(int dim);
    static SymMatrix diagonal(const Eigen::Ref<const Eigen::VectorXd>& diag);

    int dim() const { return dim_; }
    double operator()(int i, int j) const { return upper_[pack(i, j)]; }
    void set(int i, int j, double value) { upper_[pack(i, j)] = value; }

    Eigen::MatrixXd dense() const;
    double norm() const;  // Frobenius

    SymMatrix operator+(const SymMatrix& other) const;
    SymMatrix operator-(const SymMatrix& other) const;
    SymMatrix operator*(double scalar) const;

private:
    int pack(int i, int j) const;

    int dim_;
    std::vector<double> upper_;  // row-major upper triangle, d(d+1)/2 values
};

/// Symmetric positive definite matrix.
///
/// Construction computes the spectrum and fails unless the smallest
/// eigenvalue is strictly positive (no tolerance slack; callers wanting
/// slack go through project_to_spd).
class SpdMatrix {
public:
    explicit SpdMatrix(SymMatrix base);

    static SpdMatrix from_dense(const Eigen::Ref<const Eigen::MatrixXd>& m);
    static SpdMatrix identity(int dim);

    int dim() const { return base_.dim(); }
    const SymMatrix& sym() const { return base_; }
    Eigen::MatrixXd dense() const { return base_.dense(); }
    double min_eigenvalue() const { return min_eig_; }

private:
    SymMatrix base_;
    double min_eig_;
};

/// Unique SPD square root: returns y with y*y = x.
SpdMatrix sqrt_spd(const SpdMatrix& x);

/// Spectral clip: eigenvalues below `floor` are raised to `floor`.
/// Returns the input unchanged (bit-exact) when min eigenvalue >= floor.
SpdMatrix project_to_spd(const SymMatrix& x, double floor);

/// Tr(m1 * m2 * ... * mk) for a conformable chain; throws on dimension
/// mismatch (including non-square overall product).
double trace_product(const std::vector<Eigen::MatrixXd>& ms);

/// Standard Kronecker product a (x) b.
Eigen::MatrixXd kronecker(const Eigen::Ref<const Eigen::MatrixXd>& a,
                          const Eigen::Ref<const Eigen::MatrixXd>& b);

/// Half-vectorization with sqrt(2) scaling on off-diagonal entries, so
/// that svec(a) . svec(b) = Tr(a b) and quadratic forms on S^d become
/// ordinary quadratic forms on R^{d(d+1)/2}. Ordering: diagonal entries
/// first, then (i,j) with i<j row-major.
Eigen::VectorXd svec(const SymMatrix& m);
SymMatrix smat(const Eigen::Ref<const Eigen::VectorXd>& v, int dim);

/// Dimension of the svec coordinate space for S^d.
inline int svec_size(int dim) { return dim * (dim + 1) / 2; }

}  // namespace longrun
