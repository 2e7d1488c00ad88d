#pragma once

#include <Eigen/Dense>

#include <vector>

namespace stochbt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace linalg {

inline Matrix sym(const Matrix& X) { return 0.5 * (X + X.transpose()); }

/// Smallest eigenvalue of the symmetric part of X.
double min_eig_sym(const Matrix& X);

/// Largest eigenvalue of the symmetric part of X.
double max_eig_sym(const Matrix& X);

/// Eigenvalues of the symmetric part of X, ascending.
Vector eig_sym(const Matrix& X);

/// Symmetric PSD square root; eigenvalues in [-tol, 0) are clipped to zero.
/// Throws ConfigError for eigenvalues below -tol.
Matrix sqrt_psd(const Matrix& X, double tol);

/// Inverse of an SPD matrix via Cholesky; throws ConditioningError otherwise.
Matrix spd_inverse(const Matrix& X);

/// 2-norm condition number of a symmetric matrix (inf if singular/indefinite).
double cond_sym(const Matrix& X);

double relative_frobenius(const Matrix& X, const Matrix& reference);

}  // namespace linalg
}  // namespace stochbt
