#include "stochbt/balancing.hpp"

#include "stochbt/exceptions.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <sstream>

namespace stochbt {

TiePolicy parse_tie_policy(const std::string& name) {
  if (name == "keep_clusters" || name == "keep") return TiePolicy::KeepClusters;
  if (name == "split") return TiePolicy::Split;
  throw ConfigError("unknown tie policy '" + name + "' (expected keep_clusters or split)");
}

std::string to_string(TiePolicy policy) { return policy == TiePolicy::KeepClusters ? "keep_clusters" : "split"; }

namespace {

struct CholeskyFactor {
  Matrix L;
  bool jittered = false;
};

CholeskyFactor cholesky_with_jitter(const Matrix& P, double cond_max) {
  const Index n = P.rows();
  const double cond = linalg::cond_sym(P);
  if (cond > cond_max && std::isfinite(cond)) {
    std::ostringstream os;
    os << "P is too ill-conditioned to balance (condition number " << cond << " > " << cond_max << ")";
    throw ConditioningError(os.str());
  }
  CholeskyFactor out;
  Eigen::LLT<Matrix> llt(linalg::sym(P));
  if (llt.info() != Eigen::Success) {
    const double jitter = 1e-12 * P.trace() / static_cast<double>(n);
    llt.compute(linalg::sym(P) + jitter * Matrix::Identity(n, n));
    if (llt.info() != Eigen::Success) throw ConditioningError("P is not numerically positive definite");
    out.jittered = true;
  }
  out.L = llt.matrixL();
  return out;
}

struct Spectral {
  Vector lambda;  // descending
  Matrix U;
};

Spectral balancing_spectrum(const Matrix& L, const Matrix& Q, double indefinite_tol) {
  const Matrix M = linalg::sym(L.transpose() * Q * L);
  Eigen::SelfAdjointEigenSolver<Matrix> es(M);
  if (es.info() != Eigen::Success) throw NumericalError("eigensolver failed on L_P^T Q L_P");
  const Index n = M.rows();
  Spectral sp;
  sp.lambda = es.eigenvalues().reverse();
  sp.U = es.eigenvectors().rowwise().reverse();
  const double top = sp.lambda(0);
  if (!(top > 0.0)) throw ConditioningError("Q is zero or negative definite; nothing to balance");
  if (sp.lambda(n - 1) < -indefinite_tol * top) {
    std::ostringstream os;
    os << "Q is numerically indefinite (eigenvalue " << sp.lambda(n - 1) << " of L_P^T Q L_P against max " << top
       << ")";
    throw ConditioningError(os.str());
  }
  return sp;
}

}  // namespace

Vector hankel_singular_values(const Matrix& P, const Matrix& Q, const BalancingOptions& opts) {
  if (P.rows() != Q.rows() || P.rows() != P.cols() || Q.rows() != Q.cols())
    throw ConfigError("P and Q must be square of equal size");
  const CholeskyFactor chol = cholesky_with_jitter(P, opts.cond_max);
  const Spectral sp = balancing_spectrum(chol.L, Q, opts.indefinite_tol);
  return sp.lambda.cwiseMax(0.0).cwiseSqrt();
}

BalancedRealization balance(const StochasticSystem& sys, const Matrix& P, const Matrix& Q,
                            const BalancingOptions& opts) {
  const Index n = sys.n();
  if (P.rows() != n || P.cols() != n || Q.rows() != n || Q.cols() != n)
    throw ConfigError("Gramians must be n x n");

  BalancedRealization bal;
  const CholeskyFactor chol = cholesky_with_jitter(P, opts.cond_max);
  bal.jittered = chol.jittered;
  if (chol.jittered) bal.warnings.push_back("P needed a diagonal jitter before Cholesky");
  const Spectral sp = balancing_spectrum(chol.L, Q, opts.indefinite_tol);

  bal.sigma = sp.lambda.cwiseMax(0.0).cwiseSqrt();
  const double floor = opts.hsv_floor * bal.sigma(0);
  for (Index i = 0; i < n; ++i) {
    if (bal.sigma(i) < floor) {
      bal.sigma(i) = floor;
      ++bal.floored;
    }
  }
  if (bal.floored > 0) {
    std::ostringstream os;
    os << bal.floored << " Hankel singular value(s) below " << opts.hsv_floor
       << " * sigma_1 were raised to that floor; the balancing transformation is nearly singular";
    bal.warnings.push_back(os.str());
  }

  const Vector root = bal.sigma.cwiseSqrt();
  const Matrix Linv = chol.L.triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n));
  bal.S = root.asDiagonal() * sp.U.transpose() * Linv;
  bal.S_inv = chol.L * sp.U * root.cwiseInverse().asDiagonal();

  bal.A = bal.S * sys.A() * bal.S_inv;
  bal.B = bal.S * sys.B();
  bal.C = sys.C() * bal.S_inv;
  bal.N.reserve(sys.N().size());
  for (const Matrix& Ni : sys.N()) bal.N.push_back(bal.S * Ni * bal.S_inv);
  return bal;
}

ReducedModel::ReducedModel(Index r_requested, Matrix V, Matrix W, const StochasticSystem& sys,
                           std::vector<std::string> warnings)
    : r_requested_(r_requested),
      V_(std::move(V)),
      W_(std::move(W)),
      K_(sys.K()),
      f_(sys.f()),
      warnings_(std::move(warnings)) {
  if (V_.rows() != sys.n() || W_.rows() != sys.n() || V_.cols() != W_.cols())
    throw ConfigError("projection matrices do not match the system");
  A_ = W_.transpose() * sys.A() * V_;
  B_ = W_.transpose() * sys.B();
  C_ = sys.C() * V_;
  N_.reserve(sys.N().size());
  for (const Matrix& Ni : sys.N()) N_.push_back(W_.transpose() * Ni * V_);
}

Vector ReducedModel::f(const Vector& xr) const {
  if (f_.kind() == NonlinearityKind::Zero) return Vector::Zero(r());
  return W_.transpose() * f_(V_ * xr);
}

Vector ReducedModel::drift(const Vector& xr, const Vector& u) const {
  if (xr.size() != r() || u.size() != B_.cols()) throw ConfigError("drift: dimension mismatch");
  Vector out = A_ * xr + B_ * u;
  if (f_.kind() != NonlinearityKind::Zero) out += f(xr);
  return out;
}

StochasticSystem ReducedModel::as_system() const {
  Nonlinearity fr = f_;
  if (f_.kind() != NonlinearityKind::Zero) {
    const Matrix V = V_, W = W_;
    const Nonlinearity full = f_;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    fr = Nonlinearity::custom([V, W, full](const Vector& x) -> Vector { return W.transpose() * full(V * x); }, nan,
                              std::nullopt, std::nullopt, nullptr, "projected " + f_.name());
  }
  return StochasticSystem(A_, B_, C_, N_, K_, fr);
}

Index adjust_order(const Vector& sigma, Index r, const BalancingOptions& opts, std::vector<std::string>* warnings) {
  const Index n = sigma.size();
  if (r < 1 || r > n) {
    std::ostringstream os;
    os << "reduced order r = " << r << " outside [1, " << n << "]";
    throw ConfigError(os.str());
  }
  auto tied = [&](Index k) { return k < n && sigma(k - 1) - sigma(k) <= opts.split_tol * sigma(k - 1); };
  if (!tied(r)) return r;
  std::ostringstream os;
  os << "sigma_" << r << " and sigma_" << r + 1 << " are nearly equal (" << sigma(r - 1) << ", " << sigma(r) << ")";
  Index out = r;
  if (opts.tie_policy == TiePolicy::KeepClusters) {
    while (tied(out)) ++out;
    os << "; order raised to " << out << " to keep the cluster";
  } else {
    os << "; splitting the pair as requested";
  }
  if (warnings) warnings->push_back(os.str());
  return out;
}

ReducedModel truncate(const StochasticSystem& sys, const BalancedRealization& bal, Index r,
                      const BalancingOptions& opts) {
  std::vector<std::string> warnings;
  const Index k = adjust_order(bal.sigma, r, opts, &warnings);
  return ReducedModel(r, bal.S_inv.leftCols(k), bal.S.topRows(k).transpose(), sys, std::move(warnings));
}

Vector tail_sums(const Vector& sigma) {
  const Index n = sigma.size();
  Vector out = Vector::Zero(n + 1);
  for (Index r = n - 1; r >= 0; --r) out(r) = out(r + 1) + 2.0 * sigma(r);
  return out;
}

}  // namespace stochbt
