#include "stochbt/diagnostics.hpp"

#include "stochbt/exceptions.hpp"

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace stochbt {

GapForm::GapForm(Nonlinearity f, const Matrix& X, bool inverse_mode, double c2)
    : f_(std::move(f)), c2_(c2), inverse_mode_(inverse_mode) {
  if (X.rows() != X.cols()) throw ConfigError("gap weight matrix must be square");
  M_ = inverse_mode ? linalg::spd_inverse(X) : linalg::sym(X);
}

namespace {

struct GapParts {
  double value;
  double scale;
};

// <w, M g> - c2 <w, M w>, kept in this split form so that the plus gap at
// z = x is exactly four times the monotonicity gap.
GapParts gap_parts(const Matrix& M, double c2, const Vector& w, const Vector& g) {
  const double a = w.dot(M * g);
  const double b = c2 * w.dot(M * w);
  return {a - b, std::abs(a) + std::abs(b)};
}

double sign_of(GapSign s) { return s == GapSign::Plus ? 1.0 : -1.0; }

}  // namespace

double GapForm::monotonicity(const Vector& x) const { return gap_parts(M_, c2_, x, f_(x)).value; }

double GapForm::monotonicity_scale(const Vector& x) const { return gap_parts(M_, c2_, x, f_(x)).scale; }

double GapForm::lipschitz(GapSign sign, const Vector& x, const Vector& fx, const Vector& z, const Vector& fz) const {
  const double s = sign_of(sign);
  return gap_parts(M_, c2_, x + s * z, fx + s * fz).value;
}

double GapForm::lipschitz(GapSign sign, const Vector& x, const Vector& z) const {
  return lipschitz(sign, x, f_(x), z, f_(z));
}

double monotonicity_gap(const Nonlinearity& f, const Matrix& X, bool inverse_mode, const Vector& x, double c2) {
  return GapForm(f, X, inverse_mode, c2).monotonicity(x);
}

double lipschitz_gap(const Nonlinearity& f, const Matrix& X, bool inverse_mode, GapSign sign, const Vector& x,
                     const Vector& z, double c2) {
  return GapForm(f, X, inverse_mode, c2).lipschitz(sign, x, z);
}

namespace {

constexpr Index kChunk = 4096;

void finalize(GapReport& rep, const std::vector<char>& positive) {
  const Index count = rep.values.size();
  rep.n_positive = std::count(positive.begin(), positive.end(), 1);
  rep.positive_fraction = count > 0 ? static_cast<double>(rep.n_positive) / static_cast<double>(count) : 0.0;
  rep.max_positive = 0.0;
  for (Index i = 0; i < count; ++i)
    if (positive[static_cast<std::size_t>(i)]) rep.max_positive = std::max(rep.max_positive, rep.values(i));
  rep.min_value = count > 0 ? rep.values.minCoeff() : 0.0;
}

std::string box(const ScanOptions& o) {
  std::ostringstream os;
  os << "[" << o.lo << ", " << o.hi << "]";
  return os.str();
}

void check_box(const ScanOptions& o) {
  if (!(o.hi > o.lo)) throw ConfigError("scan box needs lo < hi");
}

}  // namespace

GapReport scan_monotonicity_grid(const GapForm& form, Index per_axis, const ScanOptions& opts) {
  check_box(opts);
  const Index n = form.n();
  if (n < 1 || n > 3) throw ConfigError("grid scans support n <= 3; use sampling for larger n");
  if (per_axis < 2) throw ConfigError("grid scan needs at least two points per axis");
  Index count = 1;
  for (Index i = 0; i < n; ++i) count *= per_axis;

  GapReport rep;
  std::ostringstream os;
  os << "grid " << per_axis << "^" << n << " on " << box(opts) << "^" << n;
  rep.description = os.str();
  rep.n = n;
  rep.points.resize(n, count);
  rep.values.resize(count);
  std::vector<char> positive(static_cast<std::size_t>(count), 0);
  const double step = (opts.hi - opts.lo) / static_cast<double>(per_axis - 1);
  for (Index idx = 0; idx < count; ++idx) {
    Index rest = idx;
    for (Index j = 0; j < n; ++j) {
      rep.points(j, idx) = opts.lo + step * static_cast<double>(rest % per_axis);
      rest /= per_axis;
    }
  }
  parallel_for(count, resolve_workers(opts.workers), [&](Index idx) {
    const Vector x = rep.points.col(idx);
    const double v = form.monotonicity(x);
    rep.values(idx) = v;
    positive[static_cast<std::size_t>(idx)] = v > opts.rel_tol * form.monotonicity_scale(x) ? 1 : 0;
  });
  finalize(rep, positive);
  return rep;
}

namespace {

template <class Eval>
GapReport sample_scan(Index n, Index count, const ScanOptions& opts, bool pairs, std::string description,
                      Eval eval) {
  check_box(opts);
  if (count < 1) throw ConfigError("sample count must be positive");
  GapReport rep;
  rep.description = std::move(description);
  rep.n = n;
  rep.values.resize(count);
  if (opts.keep_points) {
    rep.points.resize(n, count);
    if (pairs) rep.partners.resize(n, count);
  }
  std::vector<char> positive(static_cast<std::size_t>(count), 0);
  const Index chunks = (count + kChunk - 1) / kChunk;
  parallel_for(chunks, resolve_workers(opts.workers), [&](Index c) {
    boost::random::mt19937_64 engine(path_seed(opts.seed, c));
    boost::random::uniform_real_distribution<double> unif(opts.lo, opts.hi);
    Vector x(n), z(n);
    const Index end = std::min(count, (c + 1) * kChunk);
    for (Index i = c * kChunk; i < end; ++i) {
      for (Index j = 0; j < n; ++j) x(j) = unif(engine);
      if (pairs)
        for (Index j = 0; j < n; ++j) z(j) = unif(engine);
      const GapParts g = eval(x, z);
      rep.values(i) = g.value;
      positive[static_cast<std::size_t>(i)] = g.value > opts.rel_tol * g.scale ? 1 : 0;
      if (opts.keep_points) {
        rep.points.col(i) = x;
        if (pairs) rep.partners.col(i) = z;
      }
    }
  });
  finalize(rep, positive);
  return rep;
}

}  // namespace

GapReport scan_monotonicity_samples(const GapForm& form, Index count, const ScanOptions& opts) {
  std::ostringstream os;
  os << count << " uniform samples on " << box(opts) << "^" << form.n();
  return sample_scan(form.n(), count, opts, false, os.str(), [&](const Vector& x, const Vector&) {
    return GapParts{form.monotonicity(x), form.monotonicity_scale(x)};
  });
}

GapReport scan_lipschitz_samples(const GapForm& form, GapSign sign, Index count, const ScanOptions& opts) {
  std::ostringstream os;
  os << count << " uniform pairs on " << box(opts) << "^" << form.n() << ", "
     << (sign == GapSign::Plus ? "plus" : "minus") << " form";
  const double s = sign_of(sign);
  return sample_scan(form.n(), count, opts, true, os.str(), [&](const Vector& x, const Vector& z) {
    const double v = form.lipschitz(sign, x, z);
    const Vector w = x + s * z;
    const double scale = std::abs(v) + std::abs(form.c2() * w.dot(form.M() * w));
    return GapParts{v, scale};
  });
}

HessianCheck hessian_local_max_check(const Nonlinearity& f, double c2, Index n) {
  if (n < 1) throw ConfigError("dimension must be positive");
  const Matrix J = f.jacobian_at_zero(n);
  HessianCheck out;
  out.diagonal = J(0, 0);
  const double tol = 1e-14 * std::max(1.0, J.cwiseAbs().maxCoeff());
  Matrix off = J - out.diagonal * Matrix::Identity(n, n);
  out.scalar = off.cwiseAbs().maxCoeff() <= tol;
  out.c2_tilde = c2 - out.diagonal;
  out.passes = out.scalar && out.c2_tilde > 0.0;
  return out;
}

namespace {

using ForEachPath = std::function<void(const PathVisitor&)>;

ForEachPath from_ensemble(const StochasticSystem& sys, const Ensemble& ens) {
  if (ens.states.empty()) throw ConfigError("ensemble has no stored states; simulate with store_states = true");
  if (ens.dim != sys.n()) throw ConfigError("ensemble was not simulated from this system");
  return [&ens](const PathVisitor& visit) {
    for (Index p = 0; p < ens.n_paths; ++p)
      visit(p, ens.states[static_cast<std::size_t>(p)], ens.diverged[static_cast<std::size_t>(p)] != 0);
  };
}

ForEachPath from_stream(const StochasticSystem& sys, const ControlSignal& u, const NoiseBundle& noise,
                        const SimulationOptions& sim) {
  return [&sys, &u, &noise, sim](const PathVisitor& visit) {
    stream_states(Dynamics(sys), u, noise, Vector::Zero(sys.n()), visit, 64, sim);
  };
}

// Running sums over paths of a per-time quantity pair (L, R) and of L - R.
struct PairStats {
  Vector sl, sr, sd, sd2;
  Index n = 0;
  explicit PairStats(Index cols) : sl(Vector::Zero(cols)), sr(Vector::Zero(cols)), sd(Vector::Zero(cols)),
                                   sd2(Vector::Zero(cols)) {}
  void add(const Vector& l, const Vector& r) {
    sl += l;
    sr += r;
    const Vector d = l - r;
    sd += d;
    sd2 += d.cwiseAbs2();
    ++n;
  }
  // Fills lhs/rhs/se and returns the per-time violation flags.
  AverageCheckSeries series(double z_tol) const {
    AverageCheckSeries s;
    const Index cols = sl.size();
    const double m = static_cast<double>(n);
    s.lhs.resize(static_cast<std::size_t>(cols));
    s.rhs.resize(static_cast<std::size_t>(cols));
    s.se.resize(static_cast<std::size_t>(cols));
    s.min_margin = std::numeric_limits<double>::infinity();
    s.min_z = std::numeric_limits<double>::infinity();
    s.ok = true;
    for (Index k = 0; k < cols; ++k) {
      const double l = sl(k) / m, r = sr(k) / m, d = sd(k) / m;
      const double var = n > 1 ? std::max(0.0, (sd2(k) - m * d * d) / (m - 1.0)) : 0.0;
      const double se = std::sqrt(var / m);
      s.lhs[static_cast<std::size_t>(k)] = l;
      s.rhs[static_cast<std::size_t>(k)] = r;
      s.se[static_cast<std::size_t>(k)] = se;
      s.min_margin = std::min(s.min_margin, r - l);
      if (se > 0.0) s.min_z = std::min(s.min_z, (r - l) / se);
      if (d > z_tol * se + 1e-12 * (std::abs(l) + std::abs(r))) s.ok = false;
    }
    return s;
  }
};

void cumulative_trapezoid(const Vector& g, double dt, Vector& out) {
  out.resize(g.size());
  out(0) = 0.0;
  for (Index k = 1; k < g.size(); ++k) out(k) = out(k - 1) + 0.5 * dt * (g(k - 1) + g(k));
}

AverageMonotonicityReport average_core(const StochasticSystem& sys, const GramianPair& pair, const TimeGrid& grid,
                                       const ForEachPath& for_each, double z_tol) {
  const Matrix Pinv = linalg::spd_inverse(pair.P);
  const Matrix Q = linalg::sym(pair.Q);
  const Index cols = grid.steps + 1;
  PairStats sp(cols), sq(cols);
  Vector fP(cols), xP(cols), fQ(cols), xQ(cols), cf, cx;
  Vector fx;
  for_each([&](Index, const Matrix& X, bool diverged) {
    if (diverged) return;
    for (Index k = 0; k < cols; ++k) {
      const Vector x = X.col(k);
      sys.f().evaluate(x, fx);
      fP(k) = x.dot(Pinv * fx);
      xP(k) = pair.c2 * x.dot(Pinv * x);
      fQ(k) = x.dot(Q * fx);
      xQ(k) = pair.c2 * x.dot(Q * x);
    }
    cumulative_trapezoid(fP, grid.dt, cf);
    cumulative_trapezoid(xP, grid.dt, cx);
    sp.add(cf, cx);
    cumulative_trapezoid(fQ, grid.dt, cf);
    cumulative_trapezoid(xQ, grid.dt, cx);
    sq.add(cf, cx);
  });
  if (sp.n == 0) throw DivergenceError("every path diverged; average monotonicity check impossible");
  AverageMonotonicityReport rep;
  rep.n_used = sp.n;
  rep.P = sp.series(z_tol);
  rep.Q = sq.series(z_tol);
  return rep;
}

EnergyEstimateReport energy_core(const StochasticSystem& sys, const GramianPair& pair, const TimeGrid& grid,
                                 const ControlSignal& u, const ForEachPath& for_each, double z_tol) {
  const Index n = sys.n(), cols = grid.steps + 1;
  Eigen::SelfAdjointEigenSolver<Matrix> es(linalg::sym(pair.P));
  const Vector lambda = es.eigenvalues();
  const Matrix& vecs = es.eigenvectors();
  const Matrix Q = linalg::sym(pair.Q);
  const double c = std::max(0.0, 2.0 * (pair.c2 - pair.c1));

  EnergyEstimateReport rep;
  rep.control_id = u.id();
  rep.c = c;
  rep.control_norm_sq = control_energy(u, grid.T, 0.0);

  Matrix U(u.dim(), cols);
  for (Index k = 0; k < cols; ++k) U.col(k) = u(grid.t(k));
  const Matrix BU = sys.B() * U;
  Vector decay(cols), grow(cols);
  for (Index k = 0; k < cols; ++k) {
    decay(k) = std::exp(-c * grid.t(k));
    grow(k) = std::exp(c * grid.t(k));
  }

  Matrix s1 = Matrix::Zero(n, cols), s2 = Matrix::Zero(n, cols);
  PairStats qs(cols);
  Vector y2(cols), xbu(cols), L, R;
  Index used = 0;
  for_each([&](Index, const Matrix& X, bool diverged) {
    if (diverged) return;
    const Matrix proj = (vecs.transpose() * X).cwiseAbs2();
    s1 += proj;
    s2 += proj.cwiseAbs2();
    const Matrix Y = sys.C() * X;
    const Matrix QX = Q * X;
    for (Index k = 0; k < cols; ++k) {
      y2(k) = Y.col(k).squaredNorm();
      xbu(k) = QX.col(k).dot(BU.col(k)) * decay(k);
    }
    cumulative_trapezoid(y2, grid.dt, L);
    cumulative_trapezoid(xbu, grid.dt, R);
    R = 2.0 * R.cwiseProduct(grow);
    qs.add(L, R);
    ++used;
  });
  if (used == 0) throw DivergenceError("every path diverged; energy estimate check impossible");

  const double m = static_cast<double>(used);
  rep.P_ok = true;
  for (Index j = 0; j < n; ++j) {
    EnergyDirection d;
    d.lambda = lambda(j);
    d.bound = lambda(j) * std::exp(c * grid.T) * rep.control_norm_sq;
    Index arg = 0;
    for (Index k = 0; k < cols; ++k)
      if (s1(j, k) > s1(j, arg)) arg = k;
    d.sup_value = s1(j, arg) / m;
    const double var = used > 1 ? std::max(0.0, (s2(j, arg) - m * d.sup_value * d.sup_value) / (m - 1.0)) : 0.0;
    d.se = std::sqrt(var / m);
    d.ok = d.sup_value <= d.bound + z_tol * d.se + 1e-12 * d.bound;
    rep.P_ok = rep.P_ok && d.ok;
    rep.P.push_back(d);
  }
  const AverageCheckSeries q = qs.series(z_tol);
  rep.q_lhs = q.lhs;
  rep.q_rhs = q.rhs;
  rep.q_se = q.se;
  rep.Q_ok = q.ok;
  return rep;
}

}  // namespace

AverageMonotonicityReport average_monotonicity_check(const StochasticSystem& sys, const GramianPair& pair,
                                                     const Ensemble& ens, double z_tol) {
  AverageMonotonicityReport rep = average_core(sys, pair, ens.grid, from_ensemble(sys, ens), z_tol);
  rep.control_id = ens.control_id;
  return rep;
}

AverageMonotonicityReport average_monotonicity_check(const StochasticSystem& sys, const GramianPair& pair,
                                                     const ControlSignal& u, const NoiseBundle& noise, double z_tol,
                                                     const SimulationOptions& sim) {
  AverageMonotonicityReport rep = average_core(sys, pair, noise.grid(), from_stream(sys, u, noise, sim), z_tol);
  rep.control_id = u.id();
  return rep;
}

EnergyEstimateReport energy_estimate_check(const StochasticSystem& sys, const GramianPair& pair, const Ensemble& ens,
                                           const ControlSignal& u, double z_tol) {
  return energy_core(sys, pair, ens.grid, u, from_ensemble(sys, ens), z_tol);
}

EnergyEstimateReport energy_estimate_check(const StochasticSystem& sys, const GramianPair& pair,
                                           const ControlSignal& u, const NoiseBundle& noise, double z_tol,
                                           const SimulationOptions& sim) {
  return energy_core(sys, pair, noise.grid(), u, from_stream(sys, u, noise, sim), z_tol);
}

ClassificationReport classify_gramians(const StochasticSystem& sys, const GramianPair& pair,
                                       const std::vector<ControlSignal>& controls, const NoiseBundle& noise,
                                       const ClassificationOptions& opts) {
  const GapForm formP(sys.f(), pair.P, true, pair.c2);
  const GapForm formQ(sys.f(), pair.Q, false, pair.c2);
  ClassificationReport rep;
  ScanOptions scan = opts.scan;
  rep.mono_P = scan_monotonicity_samples(formP, opts.monotonicity_samples, scan);
  scan.seed = opts.scan.seed + 1;
  rep.mono_Q = scan_monotonicity_samples(formQ, opts.monotonicity_samples, scan);
  scan.seed = opts.scan.seed + 2;
  rep.lip_P_plus = scan_lipschitz_samples(formP, GapSign::Plus, opts.lipschitz_samples, scan);
  scan.seed = opts.scan.seed + 3;
  rep.lip_Q_minus = scan_lipschitz_samples(formQ, GapSign::Minus, opts.lipschitz_samples, scan);
  rep.global_ok = rep.mono_P.nonpositive() && rep.mono_Q.nonpositive();
  rep.lipschitz_ok = rep.lip_P_plus.nonpositive() && rep.lip_Q_minus.nonpositive();

  rep.average_ok = !controls.empty();
  for (const ControlSignal& u : controls) {
    rep.averages.push_back(average_monotonicity_check(sys, pair, u, noise, opts.z_tol, opts.sim));
    rep.average_ok = rep.average_ok && rep.averages.back().ok();
  }

  if (rep.lipschitz_ok && (rep.global_ok || rep.average_ok))
    rep.kind = GramianKind::OneSidedLipschitz;
  else if (rep.global_ok)
    rep.kind = GramianKind::GlobalMonotonicity;
  else if (rep.average_ok)
    rep.kind = GramianKind::AverageMonotonicity;
  return rep;
}

}  // namespace stochbt
