#include "stochbt/linalg.hpp"

#include "stochbt/exceptions.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace stochbt::linalg {

Vector eig_sym(const Matrix& X) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym(X), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("symmetric eigensolver failed to converge");
  return es.eigenvalues();
}

double min_eig_sym(const Matrix& X) {
  if (X.size() == 0) return 0.0;
  return eig_sym(X)(0);
}

double max_eig_sym(const Matrix& X) {
  if (X.size() == 0) return 0.0;
  Vector ev = eig_sym(X);
  return ev(ev.size() - 1);
}

Matrix sqrt_psd(const Matrix& X, double tol) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym(X));
  if (es.info() != Eigen::Success) throw NumericalError("symmetric eigensolver failed to converge");
  Vector ev = es.eigenvalues();
  for (Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol)
      throw ConfigError("matrix is not positive semidefinite (eigenvalue " + std::to_string(ev(i)) + ")");
    ev(i) = std::sqrt(std::max(ev(i), 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Matrix spd_inverse(const Matrix& X) {
  Eigen::LLT<Matrix> llt(sym(X));
  if (llt.info() != Eigen::Success) throw ConditioningError("matrix is not numerically positive definite");
  Matrix inv = llt.solve(Matrix::Identity(X.rows(), X.cols()));
  return sym(inv);
}

double cond_sym(const Matrix& X) {
  Vector ev = eig_sym(X);
  if (ev.size() == 0) return 1.0;
  const double lo = ev(0);
  const double hi = ev.cwiseAbs().maxCoeff();
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

double relative_frobenius(const Matrix& X, const Matrix& reference) {
  const double den = reference.norm();
  const double num = (X - reference).norm();
  return den > 0.0 ? num / den : num;
}

}  // namespace stochbt::linalg
