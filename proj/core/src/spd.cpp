#include "longrun/spd.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace longrun {

SymMatrix::SymMatrix(int dim) : dim_(dim) {
    if (dim <= 0) {
        throw std::invalid_argument("SymMatrix: dimension must be positive");
    }
    upper_.assign(static_cast<size_t>(dim * (dim + 1) / 2), 0.0);
}

int SymMatrix::pack(int i, int j) const {
    if (i < 0 || j < 0 || i >= dim_ || j >= dim_) {
        throw std::out_of_range("SymMatrix: index out of range");
    }
    if (i > j) std::swap(i, j);
    // row-major upper triangle: row i starts after i full rows of the triangle
    return i * dim_ - i * (i - 1) / 2 + (j - i);
}

SymMatrix SymMatrix::from_dense(const Eigen::Ref<const Eigen::MatrixXd>& m) {
    if (m.rows() != m.cols()) {
        throw std::invalid_argument("SymMatrix::from_dense: matrix not square");
    }
    SymMatrix out(static_cast<int>(m.rows()));
    for (int i = 0; i < out.dim_; ++i) {
        for (int j = i; j < out.dim_; ++j) {
            out.set(i, j, 0.5 * (m(i, j) + m(j, i)));
        }
    }
    return out;
}

SymMatrix SymMatrix::identity(int dim) {
    SymMatrix out(dim);
    for (int i = 0; i < dim; ++i) out.set(i, i, 1.0);
    return out;
}

SymMatrix SymMatrix::diagonal(const Eigen::Ref<const Eigen::VectorXd>& diag) {
    SymMatrix out(static_cast<int>(diag.size()));
    for (int i = 0; i < out.dim_; ++i) out.set(i, i, diag(i));
    return out;
}

Eigen::MatrixXd SymMatrix::dense() const {
    Eigen::MatrixXd m(dim_, dim_);
    for (int i = 0; i < dim_; ++i) {
        for (int j = i; j < dim_; ++j) {
            m(i, j) = (*this)(i, j);
            m(j, i) = m(i, j);
        }
    }
    return m;
}

double SymMatrix::norm() const {
    double sum = 0.0;
    for (int i = 0; i < dim_; ++i) {
        for (int j = 0; j < dim_; ++j) {
            const double v = (*this)(i, j);
            sum += v * v;
        }
    }
    return std::sqrt(sum);
}

SymMatrix SymMatrix::operator+(const SymMatrix& other) const {
    if (other.dim_ != dim_) throw std::invalid_argument("SymMatrix: dim mismatch");
    SymMatrix out(dim_);
    for (size_t k = 0; k < upper_.size(); ++k) out.upper_[k] = upper_[k] + other.upper_[k];
    return out;
}

SymMatrix SymMatrix::operator-(const SymMatrix& other) const {
    if (other.dim_ != dim_) throw std::invalid_argument("SymMatrix: dim mismatch");
    SymMatrix out(dim_);
    for (size_t k = 0; k < upper_.size(); ++k) out.upper_[k] = upper_[k] - other.upper_[k];
    return out;
}

SymMatrix SymMatrix::operator*(double scalar) const {
    SymMatrix out(dim_);
    for (size_t k = 0; k < upper_.size(); ++k) out.upper_[k] = upper_[k] * scalar;
    return out;
}

SpdMatrix::SpdMatrix(SymMatrix base) : base_(std::move(base)), min_eig_(0.0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(base_.dense(),
                                                      Eigen::EigenvaluesOnly);
    min_eig_ = es.eigenvalues().minCoeff();
    if (!(min_eig_ > 0.0)) {
        std::ostringstream oss;
        oss << "SpdMatrix: matrix not positive definite (min eigenvalue "
            << min_eig_ << ")";
        throw std::invalid_argument(oss.str());
    }
}

SpdMatrix SpdMatrix::from_dense(const Eigen::Ref<const Eigen::MatrixXd>& m) {
    return SpdMatrix(SymMatrix::from_dense(m));
}

SpdMatrix SpdMatrix::identity(int dim) {
    return SpdMatrix(SymMatrix::identity(dim));
}

SpdMatrix sqrt_spd(const SpdMatrix& x) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x.dense());
    Eigen::VectorXd roots = es.eigenvalues().cwiseSqrt();
    Eigen::MatrixXd y =
        es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
    return SpdMatrix(SymMatrix::from_dense(y));
}

SpdMatrix project_to_spd(const SymMatrix& x, double floor) {
    if (!(floor > 0.0)) {
        throw std::invalid_argument("project_to_spd: floor must be positive");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x.dense());
    if (es.eigenvalues().minCoeff() >= floor) {
        return SpdMatrix(x);  // already inside the cone: identity map
    }
    Eigen::VectorXd clipped = es.eigenvalues().cwiseMax(floor);
    Eigen::MatrixXd y =
        es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
    return SpdMatrix(SymMatrix::from_dense(y));
}

double trace_product(const std::vector<Eigen::MatrixXd>& ms) {
    if (ms.empty()) throw std::invalid_argument("trace_product: empty chain");
    Eigen::MatrixXd acc = ms.front();
    for (size_t k = 1; k < ms.size(); ++k) {
        if (acc.cols() != ms[k].rows()) {
            std::ostringstream oss;
            oss << "trace_product: dimension mismatch at factor " << k << " ("
                << acc.cols() << " vs " << ms[k].rows() << ")";
            throw std::invalid_argument(oss.str());
        }
        acc = acc * ms[k];
    }
    if (acc.rows() != acc.cols()) {
        throw std::invalid_argument("trace_product: chain product not square");
    }
    return acc.trace();
}

Eigen::MatrixXd kronecker(const Eigen::Ref<const Eigen::MatrixXd>& a,
                          const Eigen::Ref<const Eigen::MatrixXd>& b) {
    Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        }
    }
    return out;
}

Eigen::VectorXd svec(const SymMatrix& m) {
    const int d = m.dim();
    Eigen::VectorXd v(svec_size(d));
    int k = 0;
    for (int i = 0; i < d; ++i) v(k++) = m(i, i);
    const double s = std::sqrt(2.0);
    for (int i = 0; i < d; ++i) {
        for (int j = i + 1; j < d; ++j) v(k++) = s * m(i, j);
    }
    return v;
}

SymMatrix smat(const Eigen::Ref<const Eigen::VectorXd>& v, int dim) {
    if (v.size() != svec_size(dim)) {
        throw std::invalid_argument("smat: size does not match dimension");
    }
    SymMatrix m(dim);
    int k = 0;
    for (int i = 0; i < dim; ++i) m.set(i, i, v(k++));
    const double s = 1.0 / std::sqrt(2.0);
    for (int i = 0; i < dim; ++i) {
        for (int j = i + 1; j < dim; ++j) m.set(i, j, s * v(k++));
    }
    return m;
}

}  // namespace longrun
