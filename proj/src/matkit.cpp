#include "mixenv/matkit.hpp"

#include <cmath>

#include "mixenv/errors.hpp"

namespace mixenv {

Vector vec(const Matrix& m) {
    return Eigen::Map<const Vector>(m.data(), m.size());
}

Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
    if (v.size() != rows * cols) throw std::invalid_argument("unvec: size mismatch");
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

Vector vech(const Matrix& s) {
    if (s.rows() != s.cols()) throw std::invalid_argument("vech: matrix must be square");
    const Eigen::Index r = s.rows();
    Vector out(r * (r + 1) / 2);
    Eigen::Index k = 0;
    for (Eigen::Index j = 0; j < r; ++j)
        for (Eigen::Index i = j; i < r; ++i) out(k++) = s(i, j);
    return out;
}

Matrix unvech(const Vector& v) {
    const double disc = std::sqrt(1.0 + 8.0 * static_cast<double>(v.size()));
    const auto r = static_cast<Eigen::Index>(std::llround((disc - 1.0) / 2.0));
    if (r * (r + 1) / 2 != v.size()) throw std::invalid_argument("unvech: length is not triangular");
    Matrix s(r, r);
    Eigen::Index k = 0;
    for (Eigen::Index j = 0; j < r; ++j)
        for (Eigen::Index i = j; i < r; ++i) {
            s(i, j) = v(k);
            s(j, i) = v(k);
            ++k;
        }
    return s;
}

Matrix expansion_matrix(int r) {
    if (r < 1) throw std::invalid_argument("expansion_matrix: r must be >= 1");
    Matrix e = Matrix::Zero(r * r, r * (r + 1) / 2);
    int k = 0;
    for (int j = 0; j < r; ++j)
        for (int i = j; i < r; ++i) {
            e(i + j * r, k) = 1.0;
            e(j + i * r, k) = 1.0;
            ++k;
        }
    return e;
}

Matrix contraction_matrix(int r) {
    if (r < 1) throw std::invalid_argument("contraction_matrix: r must be >= 1");
    Matrix c = Matrix::Zero(r * (r + 1) / 2, r * r);
    int k = 0;
    for (int j = 0; j < r; ++j)
        for (int i = j; i < r; ++i) {
            if (i == j) {
                c(k, i + j * r) = 1.0;
            } else {
                c(k, i + j * r) = 0.5;
                c(k, j + i * r) = 0.5;
            }
            ++k;
        }
    return c;
}

Matrix commutation_matrix(int s, int m) {
    if (s < 1 || m < 1) throw std::invalid_argument("commutation_matrix: dimensions must be >= 1");
    Matrix k = Matrix::Zero(s * m, s * m);
    for (int i = 0; i < s; ++i)
        for (int j = 0; j < m; ++j) k(j + i * m, i + j * s) = 1.0;
    return k;
}

Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

Matrix pinv(const Matrix& a, double rank_tol) {
    if (!(rank_tol > 0)) throw std::invalid_argument("pinv: rank_tol must be positive");
    if (a.size() == 0) return Matrix::Zero(a.cols(), a.rows());
    Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    const double smax = sv.size() > 0 ? sv(0) : 0.0;
    Vector inv = Vector::Zero(sv.size());
    if (smax > 0)
        for (Eigen::Index i = 0; i < sv.size(); ++i)
            if (sv(i) > rank_tol * smax) inv(i) = 1.0 / sv(i);
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Matrix projector(const Matrix& b, double rank_tol) {
    if (b.cols() == 0) return Matrix::Zero(b.rows(), b.rows());
    const Matrix q = orth(b, rank_tol);
    return q * q.transpose();
}

Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

double logdet0(const Matrix& s, double rank_tol) {
    if (s.rows() != s.cols()) throw std::invalid_argument("logdet0: matrix must be square");
    if (s.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(s), Eigen::EigenvaluesOnly);
    const Vector& ev = es.eigenvalues();
    const double lmax = ev.cwiseAbs().maxCoeff();
    if (lmax == 0.0) return 0.0;
    double out = 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < -rank_tol * lmax) throw SingularCovarianceError("logdet0: matrix is indefinite");
        if (ev(i) > rank_tol * lmax) out += std::log(ev(i));
    }
    return out;
}

Matrix orth(const Matrix& b, double rank_tol) {
    if (b.cols() == 0) return Matrix(b.rows(), 0);
    Eigen::BDCSVD<Matrix> svd(b, Eigen::ComputeThinU);
    const Vector& sv = svd.singularValues();
    Eigen::Index rank = 0;
    if (sv.size() > 0 && sv(0) > 0)
        for (Eigen::Index i = 0; i < sv.size(); ++i)
            if (sv(i) > rank_tol * sv(0)) ++rank;
    return svd.matrixU().leftCols(rank);
}

Matrix orth_complement(const Matrix& b, int rows) {
    if (b.cols() == 0) return Matrix::Identity(rows, rows);
    const Matrix q = orth(b);
    Eigen::HouseholderQR<Matrix> qr(q);
    const Matrix full = qr.householderQ() * Matrix::Identity(rows, rows);
    return full.rightCols(rows - q.cols());
}

double logdet_spd(const Matrix& s) {
    if (s.size() == 0) return 0.0;
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) throw SingularCovarianceError("matrix is not positive definite");
    const Vector d = llt.matrixL().toDenseMatrix().diagonal();
    double out = 0.0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (!(d(i) > 0)) throw SingularCovarianceError("matrix is not positive definite");
        out += 2.0 * std::log(d(i));
    }
    return out;
}

Matrix inverse_spd(const Matrix& s) {
    if (s.size() == 0) return Matrix(0, 0);
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) throw SingularCovarianceError("matrix is not positive definite");
    return symmetrize(llt.solve(Matrix::Identity(s.rows(), s.cols())));
}

double subspace_distance(const Matrix& a, const Matrix& b) {
    return (projector(a) - projector(b)).norm();
}

}  // namespace mixenv
