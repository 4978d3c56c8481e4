#pragma once

#include <Eigen/Dense>

namespace mixenv {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kRankTol = 1e-10;

/// Column stacking.
Vector vec(const Matrix& m);

/// Inverse of vec for a rows x cols target.
Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols);

/// Column-major scan of the lower triangle. Throws on non-square input.
Vector vech(const Matrix& s);

/// Symmetric matrix from its half-vectorization.
Matrix unvech(const Vector& v);

/// Duplication matrix E_r with vec(S) = E_r vech(S).
Matrix expansion_matrix(int r);

/// C_r with vech(S) = C_r vec(S); the Moore-Penrose inverse of E_r.
///
/// Off-diagonal entries are 1/2 so that C_r K_{rr} = C_r, which the gradient
/// formulas rely on.
Matrix contraction_matrix(int r);

/// Commutation matrix K_{sm}: K vec(A) = vec(A^T) for A of shape s x m.
Matrix commutation_matrix(int s, int m);

Matrix kron(const Matrix& a, const Matrix& b);

/// Moore-Penrose inverse; singular values below rank_tol * sigma_max are dropped.
Matrix pinv(const Matrix& a, double rank_tol = kRankTol);

/// Orthogonal projector onto span(B).
Matrix projector(const Matrix& b, double rank_tol = kRankTol);

/// Log of the product of eigenvalues above rank_tol * lambda_max.
double logdet0(const Matrix& s, double rank_tol = kRankTol);

/// (A + A^T) / 2.
Matrix symmetrize(const Matrix& a);

/// Orthonormal basis of span(B) (rank decided with rank_tol).
Matrix orth(const Matrix& b, double rank_tol = kRankTol);

/// Orthonormal basis of the orthogonal complement of span(B) in R^rows.
/// For B with zero columns this is the identity.
Matrix orth_complement(const Matrix& b, int rows);

/// Log determinant of a symmetric positive definite matrix; throws
/// SingularCovarianceError otherwise.
double logdet_spd(const Matrix& s);

/// Inverse of a symmetric positive definite matrix via Cholesky.
Matrix inverse_spd(const Matrix& s);

/// Projector distance ||P_A - P_B||_F.
double subspace_distance(const Matrix& a, const Matrix& b);

}  // namespace mixenv
