#pragma once

#include "stochbt/linalg.hpp"
#include "stochbt/model.hpp"

#include <complex>
#include <vector>

namespace stochbt {

/// L_{c1}(X) = (A + c1 I)^T X + X (A + c1 I) + sum_{i,j} N_i^T X N_j k_ij.
///
/// Holds copies of the coefficients it needs, so it can outlive the system.
class LyapunovOperator {
 public:
  LyapunovOperator(const StochasticSystem& sys, double c1);

  Matrix apply(const Matrix& X) const;
  /// Only the noise part sum_{i,j} N_i^T X N_j k_ij.
  Matrix noise_term(const Matrix& X) const;

  double c1() const { return c1_; }
  Index n() const { return A_shift_.rows(); }
  const Matrix& shifted_A() const { return A_shift_; }
  const std::vector<Matrix>& N() const { return N_; }
  const Matrix& K() const { return K_; }

 private:
  Matrix A_shift_;
  std::vector<Matrix> N_;
  Matrix K_;
  double c1_;
};

/// Solves A^T X + X A = -R for a Hurwitz A using a complex Schur form of A
/// (Bartels-Stewart). The Schur factorization is computed once and reused.
class StandardLyapunovSolver {
 public:
  explicit StandardLyapunovSolver(const Matrix& A);
  /// Solution of (A - s/2 I)^T X + X (A - s/2 I) = -R.
  Matrix solve(const Matrix& R, double shift = 0.0) const;
  /// Largest real part of the eigenvalues of A.
  double abscissa() const;

 private:
  Eigen::MatrixXcd T_;
  Eigen::MatrixXcd U_;
};

struct SpectralOptions {
  /// Dimension up to which the n^2 x n^2 Kronecker matrix is formed explicitly.
  Index kronecker_max_n = 60;
  double bisection_tol = 1e-9;
  int power_max_iter = 2000;
};

/// Largest real part of the spectrum of
/// I (x) (A+c1 I) + (A+c1 I) (x) I + sum_{i,j} N_i (x) N_j k_ij.
/// Negative iff the shifted system is mean-square asymptotically stable.
double spectral_abscissa(const StochasticSystem& sys, double c1, const SpectralOptions& opts = {});

struct LyapunovSolveOptions {
  double tol = 1e-10;
  int max_iter = 500;
};

struct LyapunovSolution {
  Matrix X;
  int iterations = 0;
  /// ||L(X) + RHS||_F
  double residual = 0.0;
};

/// Solves L_{c1}(X) = -RHS by the fixed-point iteration
/// X_{k+1} = lyap(A + c1 I, RHS + noise_term(X_k)).
/// Throws StabilityError when the iteration does not converge.
LyapunovSolution solve_equality(const LyapunovOperator& op, const Matrix& rhs, const LyapunovSolveOptions& opts = {});

}  // namespace stochbt
