#include "stochbt/lyapunov.hpp"

#include "stochbt/exceptions.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <sstream>

namespace stochbt {

LyapunovOperator::LyapunovOperator(const StochasticSystem& sys, double c1)
    : A_shift_(sys.A() + c1 * Matrix::Identity(sys.n(), sys.n())), N_(sys.N()), K_(sys.K()), c1_(c1) {}

Matrix LyapunovOperator::noise_term(const Matrix& X) const {
  const Index n = A_shift_.rows();
  Matrix out = Matrix::Zero(n, n);
  const Index d = static_cast<Index>(N_.size());
  for (Index j = 0; j < d; ++j) {
    Matrix XNj = X * N_[j];
    for (Index i = 0; i < d; ++i) {
      const double kij = K_(i, j);
      if (kij == 0.0) continue;
      out.noalias() += kij * (N_[i].transpose() * XNj);
    }
  }
  return out;
}

Matrix LyapunovOperator::apply(const Matrix& X) const {
  Matrix out = A_shift_.transpose() * X + X * A_shift_ + noise_term(X);
  return linalg::sym(out);
}

StandardLyapunovSolver::StandardLyapunovSolver(const Matrix& A) {
  Eigen::ComplexSchur<Matrix> schur(A, true);
  if (schur.info() != Eigen::Success) throw NumericalError("complex Schur decomposition did not converge");
  T_ = schur.matrixT();
  U_ = schur.matrixU();
}

double StandardLyapunovSolver::abscissa() const {
  double a = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < T_.rows(); ++i) a = std::max(a, T_(i, i).real());
  return a;
}

Matrix StandardLyapunovSolver::solve(const Matrix& R, double shift) const {
  // With A = U T U^*:  T^* Y + Y T - s Y = -F,  Y = U^* X U,  F = U^* R U.
  const Index n = T_.rows();
  const Eigen::MatrixXcd F = U_.adjoint() * R.cast<std::complex<double>>() * U_;
  Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(n, n);
  Eigen::MatrixXcd lower = T_.adjoint();
  for (Index j = 0; j < n; ++j) {
    Eigen::VectorXcd rhs = -F.col(j);
    if (j > 0) rhs.noalias() -= Y.leftCols(j) * T_.col(j).head(j);
    const std::complex<double> offset = T_(j, j) - shift;
    lower.diagonal().array() += offset;
    Y.col(j) = lower.triangularView<Eigen::Lower>().solve(rhs);
    lower.diagonal().array() -= offset;
  }
  Matrix X = (U_ * Y * U_.adjoint()).real();
  return linalg::sym(X);
}

namespace {

Matrix kronecker_stability_matrix(const StochasticSystem& sys, double c1) {
  const Index n = sys.n();
  const Matrix As = sys.A() + c1 * Matrix::Identity(n, n);
  Matrix M = Matrix::Zero(n * n, n * n);
  // kron(X, Y) block (a, b) = X(a, b) * Y
  for (Index a = 0; a < n; ++a) {
    M.block(a * n, a * n, n, n) += As;
    for (Index b = 0; b < n; ++b) {
      if (As(a, b) != 0.0) M.block(a * n, b * n, n, n).diagonal().array() += As(a, b);
    }
  }
  const Index d = sys.d();
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) {
      const double kij = sys.K()(i, j);
      if (kij == 0.0) continue;
      const Matrix& Ni = sys.N()[i];
      const Matrix& Nj = sys.N()[j];
      for (Index a = 0; a < n; ++a)
        for (Index b = 0; b < n; ++b)
          if (Ni(a, b) != 0.0) M.block(a * n, b * n, n, n).noalias() += (kij * Ni(a, b)) * Nj;
    }
  }
  return M;
}

// Spectral radius of X -> solve(noise_term(X), s) by power iteration on the
// PSD cone (the map is positive, so the Perron root is attained there).
double perron_radius(const LyapunovOperator& op, const StandardLyapunovSolver& lyap, double shift, int max_iter) {
  const Index n = op.n();
  Matrix X = Matrix::Identity(n, n) / static_cast<double>(n);
  double rho = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Matrix Y = lyap.solve(op.noise_term(X), shift);
    const double tr = Y.trace();
    if (!(tr > 0.0) || !std::isfinite(tr)) return tr > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    const double next = tr / X.trace();
    X = Y / tr;
    if (it > 5 && std::abs(next - rho) <= 1e-12 * std::max(1.0, next)) return next;
    rho = next;
  }
  return rho;
}

double abscissa_by_bisection(const StochasticSystem& sys, double c1, const SpectralOptions& opts) {
  LyapunovOperator op(sys, c1);
  StandardLyapunovSolver lyap(op.shifted_A());
  const double base = 2.0 * lyap.abscissa();
  const Matrix probe = op.noise_term(Matrix::Identity(sys.n(), sys.n()));
  if (probe.isZero(0.0)) return base;

  auto unstable_at = [&](double s) {
    if (base >= s) return true;
    return perron_radius(op, lyap, s, opts.power_max_iter) >= 1.0;
  };
  double lo = base;
  double width = std::max(1.0, std::abs(base) * 1e-3);
  double hi = base + width;
  while (unstable_at(hi)) {
    lo = hi;
    width *= 2.0;
    hi = base + width;
    if (!std::isfinite(hi)) throw NumericalError("spectral abscissa bracketing failed");
  }
  while (hi - lo > opts.bisection_tol * std::max(1.0, std::abs(hi))) {
    const double mid = 0.5 * (lo + hi);
    if (unstable_at(mid))
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

double spectral_abscissa(const StochasticSystem& sys, double c1, const SpectralOptions& opts) {
  if (sys.n() > opts.kronecker_max_n) return abscissa_by_bisection(sys, c1, opts);
  const Matrix M = kronecker_stability_matrix(sys, c1);
  Eigen::EigenSolver<Matrix> es(M, false);
  if (es.info() != Eigen::Success) {
    std::ostringstream os;
    os << "eigensolver failed on the " << M.rows() << "x" << M.cols() << " Kronecker stability matrix";
    throw NumericalError(os.str());
  }
  return es.eigenvalues().real().maxCoeff();
}

LyapunovSolution solve_equality(const LyapunovOperator& op, const Matrix& rhs, const LyapunovSolveOptions& opts) {
  const Index n = op.n();
  if (rhs.rows() != n || rhs.cols() != n) throw ConfigError("right-hand side must be n x n");

  StandardLyapunovSolver lyap(op.shifted_A());
  if (lyap.abscissa() >= 0.0) {
    std::ostringstream os;
    os << "A + c1 I is not Hurwitz (abscissa " << lyap.abscissa() << " at c1 = " << op.c1()
       << "); choose a smaller shift c1";
    throw StabilityError(os.str());
  }

  const Matrix R = linalg::sym(rhs);
  const double target = opts.tol * R.norm();
  LyapunovSolution sol;
  sol.X = lyap.solve(R);
  for (int it = 1; it <= opts.max_iter; ++it) {
    sol.iterations = it;
    sol.residual = (op.apply(sol.X) + R).norm();
    if (!std::isfinite(sol.residual)) break;
    if (sol.residual <= target) return sol;
    Matrix next = lyap.solve(R + op.noise_term(sol.X));
    const double step = (next - sol.X).norm();
    sol.X = std::move(next);
    if (step == 0.0) {
      sol.residual = (op.apply(sol.X) + R).norm();
      if (sol.residual <= target) return sol;
      break;
    }
  }
  std::ostringstream os;
  os << "generalized Lyapunov fixed-point iteration did not converge (residual " << sol.residual << " after "
     << sol.iterations << " iterations, c1 = " << op.c1()
     << "); the shifted system is not (or barely) mean-square stable, use a smaller shift c1";
  throw StabilityError(os.str());
}

}  // namespace stochbt
