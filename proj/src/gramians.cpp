#include "stochbt/gramians.hpp"

#include "stochbt/exceptions.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>
#include <sstream>

namespace stochbt {

std::string to_string(GramianKind kind) {
  switch (kind) {
    case GramianKind::GlobalMonotonicity: return "GlobalMonotonicity";
    case GramianKind::AverageMonotonicity: return "AverageMonotonicity";
    case GramianKind::OneSidedLipschitz: return "OneSidedLipschitz";
  }
  return "unknown";
}

double default_shift(const Nonlinearity& f) {
  switch (f.kind()) {
    case NonlinearityKind::F1: return *f.c_lip_minus();
    case NonlinearityKind::Zero: return 0.0;
    default: return f.c_f();
  }
}

LyapunovSolution compute_Q(const StochasticSystem& sys, double c1, const LyapunovSolveOptions& opts) {
  LyapunovOperator op(sys, c1);
  return solve_equality(op, sys.C().transpose() * sys.C(), opts);
}

ScalingResult feasible_P_from_scaling(const StochasticSystem& sys, double c1, const Matrix& X) {
  const Index n = sys.n();
  if (X.rows() != n || X.cols() != n) throw ConfigError("X must be n x n");
  LyapunovOperator op(sys, c1);
  const Matrix Y = linalg::sym(-op.apply(X));
  const double ymin = linalg::min_eig_sym(Y);
  if (!(ymin > 1e-12 * std::max(1.0, Y.norm()))) {
    std::ostringstream os;
    os << "X is not strictly dissipative for the shifted operator (min eig of -L(X) = " << ymin << ")";
    throw ConfigError(os.str());
  }
  ScalingResult res;
  if (sys.B().isZero(0.0)) {
    res.gamma = 1.0;
    res.P = linalg::spd_inverse(X);
    return res;
  }
  const Matrix XB = X * sys.B();
  const Matrix M = XB * XB.transpose();
  // gamma Y - gamma^2 M >= 0  <=>  Y - gamma M >= 0
  auto ok = [&](double g) { return linalg::min_eig_sym(Y - g * M) > 0.0; };
  double g = 1.0;
  if (ok(g)) {
    for (int k = 0; k < 1100 && ok(2.0 * g); ++k) g *= 2.0;
  } else {
    for (int k = 0; k < 1100 && !ok(g); ++k) g *= 0.5;
    if (!ok(g)) throw NumericalError("no feasible scaling gamma found");
  }
  res.gamma = g;
  res.P = linalg::spd_inverse(g * X);
  return res;
}

namespace {

Matrix stacked_noise(const StochasticSystem& sys) {
  const Index n = sys.n(), d = sys.d();
  Matrix Ncat(n, d * n);
  for (Index i = 0; i < d; ++i) Ncat.middleCols(i * n, n) = sys.N()[i].transpose();
  return Ncat;
}

Matrix inverse_covariance(const StochasticSystem& sys, double max_cond) {
  if (sys.d() == 0) return Matrix(0, 0);
  const double cond = linalg::cond_sym(sys.K());
  if (!(cond <= max_cond)) {
    std::ostringstream os;
    os << "noise covariance K is singular or nearly so (condition number " << cond
       << "); the block LMI needs K^{-1}";
    throw ConfigError(os.str());
  }
  return linalg::spd_inverse(sys.K());
}

// Homogeneous part of the block LMI, with the BB^T term excluded.
struct LmiMap {
  Matrix As;
  Matrix Ncat;
  Matrix Kinv;
  Index n = 0, d = 0;

  Index size() const { return (d + 1) * n; }

  void apply(const Matrix& P, Matrix& out) const {
    out.setZero(size(), size());
    out.topLeftCorner(n, n) = As * P + P * As.transpose();
    if (d > 0) {
      const Matrix PN = P * Ncat;
      out.topRightCorner(n, d * n) = PN;
      out.bottomLeftCorner(d * n, n) = PN.transpose();
      for (Index a = 0; a < d; ++a)
        for (Index b = 0; b < d; ++b) out.block(n + a * n, n + b * n, n, n) = -Kinv(a, b) * P;
    }
  }
};

LmiMap make_map(const StochasticSystem& sys, double c1, double max_cond) {
  LmiMap map;
  map.n = sys.n();
  map.d = sys.d();
  map.As = sys.A() + c1 * Matrix::Identity(map.n, map.n);
  map.Ncat = stacked_noise(sys);
  map.Kinv = inverse_covariance(sys, max_cond);
  return map;
}

// Coordinates of a symmetric matrix: P(i,i) and P(i,j) for i < j.
Matrix unpack(const Vector& p, Index n) {
  Matrix P(n, n);
  Index k = 0;
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i <= j; ++i, ++k) P(i, j) = P(j, i) = p(k);
  return P;
}

}  // namespace

Matrix block_lmi(const StochasticSystem& sys, double c1, const Matrix& P) {
  const LmiMap map = make_map(sys, c1, std::numeric_limits<double>::infinity());
  Matrix F;
  map.apply(P, F);
  F.topLeftCorner(map.n, map.n) += sys.B() * sys.B().transpose();
  return F;
}

Matrix transformed_inequality(const StochasticSystem& sys, double c1, const Matrix& P) {
  const Index n = sys.n();
  const Matrix As = sys.A() + c1 * Matrix::Identity(n, n);
  Matrix out = As * P + P * As.transpose() + sys.B() * sys.B().transpose();
  if (sys.d() > 0) {
    const Matrix Pinv = linalg::spd_inverse(P);
    for (Index i = 0; i < sys.d(); ++i) {
      const Matrix PNi = P * sys.N()[i].transpose();
      for (Index j = 0; j < sys.d(); ++j) {
        const double kij = sys.K()(i, j);
        if (kij == 0.0) continue;
        out.noalias() += kij * (PNi * Pinv * (sys.N()[j] * P));
      }
    }
  }
  return linalg::sym(out);
}

MinTraceResult MinTraceSolver::solve(const StochasticSystem& sys, double c1) {
  const Index n = sys.n();
  const LmiMap map = make_map(sys, c1, opts_.max_cond_K);
  const Index msz = map.size();
  const Index nv = n * (n + 1) / 2;
  const Matrix BBt = sys.B() * sys.B().transpose();

  // Starting point: P = (gamma X)^{-1} with L(X) = -I, shrunk until the
  // block matrix is strictly negative definite.
  LyapunovOperator op(sys, c1);
  const LyapunovSolution Xsol = solve_equality(op, Matrix::Identity(n, n));
  Matrix P = feasible_P_from_scaling(sys, c1, Xsol.X).P;

  Matrix F;
  auto neg_lmi = [&](const Matrix& PP, Matrix& G) {
    map.apply(PP, F);
    G = -F;
    G.topLeftCorner(n, n) -= BBt;
  };
  Eigen::LLT<Matrix> llt;
  {
    int tries = 0;
    for (;; ++tries) {
      neg_lmi(P, G_);
      llt.compute(G_);
      if (llt.info() == Eigen::Success) break;
      if (tries > 60)
        throw StabilityError("no strictly feasible starting point for the block LMI; use a smaller shift c1");
      P *= 2.0;
    }
  }

  // Images of the coordinate basis under the linear part.
  std::vector<Matrix> basis(nv);
  {
    Index k = 0;
    Matrix E = Matrix::Zero(n, n);
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i <= j; ++i, ++k) {
        E(i, j) = E(j, i) = 1.0;
        map.apply(E, basis[k]);
        E(i, j) = E(j, i) = 0.0;
      }
  }
  Vector c(nv);
  {
    Index k = 0;
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i <= j; ++i, ++k) c(k) = (i == j) ? 1.0 : 0.0;
  }

  MinTraceResult res;
  res.initial_trace = P.trace();
  const double floor = opts_.floor_scale * res.initial_trace;
  const double m = static_cast<double>(msz);
  double t = m / std::max(res.initial_trace, std::numeric_limits<double>::min());

  auto log_det = [](const Eigen::LLT<Matrix>& f) { return 2.0 * f.matrixLLT().diagonal().array().log().sum(); };

  W_.resize(msz * msz, nv);
  Matrix Gtrial;
  for (int outer = 0; outer < opts_.max_outer; ++outer) {
    res.outer_iterations = outer + 1;
    for (int it = 0; it < opts_.max_newton_per_center; ++it) {
      neg_lmi(P, G_);
      llt.compute(G_);
      if (llt.info() != Eigen::Success) throw NumericalError("barrier iterate left the feasible region");
      // S_k = L^{-1} F_k L^{-T}; gradient of -log det(G) is tr(G^{-1} F_k) = tr(S_k),
      // Hessian <S_k, S_l>.
      const auto L = llt.matrixL();
      Vector g(nv);
      for (Index k = 0; k < nv; ++k) {
        const Matrix half = L.solve(basis[k]);
        const Matrix Sk = L.solve(half.transpose());
        g(k) = t * c(k) + Sk.trace();
        W_.col(k) = Eigen::Map<const Vector>(Sk.data(), msz * msz);
      }
      H_.resize(nv, nv);
      H_.setZero();
      H_.selfadjointView<Eigen::Lower>().rankUpdate(W_.transpose());
      const Eigen::LDLT<Matrix, Eigen::Lower> ldlt(H_);
      const Vector dp = ldlt.solve(-g);
      const double decrement2 = -g.dot(dp);
      ++res.newton_iterations;
      if (!std::isfinite(decrement2)) throw NumericalError("Newton system of the barrier method is singular");
      if (decrement2 * 0.5 <= opts_.newton_tol) break;

      const double phi0 = t * P.trace() - log_det(llt);
      const Matrix dP = unpack(dp, n);
      double alpha = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
        const Matrix Pt = P + alpha * dP;
        neg_lmi(Pt, Gtrial);
        Eigen::LLT<Matrix> trial(Gtrial);
        if (trial.info() != Eigen::Success) continue;
        const double phi = t * Pt.trace() - log_det(trial);
        if (phi <= phi0 - 0.25 * alpha * decrement2) {
          P = Pt;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
    }
    res.duality_measure = m / t;
    if (res.duality_measure <= opts_.rel_gap * std::max(P.trace(), floor)) break;
    t *= opts_.barrier_factor;
  }
  res.P = linalg::sym(P);
  res.trace = res.P.trace();
  return res;
}

MinTraceResult compute_P_min_trace(const StochasticSystem& sys, double c1, const MinTraceOptions& opts) {
  MinTraceSolver solver(opts);
  return solver.solve(sys, c1);
}

Certificates verify_gramian_inequalities(const StochasticSystem& sys, const GramianPair& pair) {
  LyapunovOperator op(sys, pair.c1);
  Certificates cert;
  const Matrix Pinv = linalg::spd_inverse(pair.P);
  const Matrix PinvB = Pinv * sys.B();
  cert.cert_P = linalg::min_eig_sym(-(op.apply(Pinv) + PinvB * PinvB.transpose()));
  cert.cert_Q = linalg::min_eig_sym(-(op.apply(pair.Q) + sys.C().transpose() * sys.C()));
  return cert;
}

GramianComputation compute_gramians(const StochasticSystem& sys, double c1, double c2, const GramianOptions& opts) {
  GramianComputation out;
  out.abscissa = spectral_abscissa(sys, c1, opts.spectral);
  if (!(out.abscissa < 0.0)) {
    std::ostringstream os;
    os << "shifted system is not mean-square stable (spectral abscissa " << out.abscissa << " at c1 = " << c1
       << "); choose a smaller c1";
    throw StabilityError(os.str());
  }
  const LyapunovSolution q = compute_Q(sys, c1, opts.lyapunov);
  out.q_iterations = q.iterations;
  out.p_stats = compute_P_min_trace(sys, c1, opts.min_trace);

  GramianPair& pair = out.pair;
  pair.P = out.p_stats.P;
  pair.Q = q.X;
  pair.c1 = c1;
  pair.c2 = c2;
  pair.q_residual = q.residual;
  const Certificates cert = verify_gramian_inequalities(sys, pair);
  pair.cert_P = cert.cert_P;
  pair.cert_Q = cert.cert_Q;
  return out;
}

}  // namespace stochbt
