#include "stochbt/error_bounds.hpp"

#include "stochbt/exceptions.hpp"
#include "stochbt/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace stochbt {

double classical_bound(const Vector& sigma, Index r, const ControlSignal& u, double T, double c) {
  if (r < 0 || r > sigma.size()) throw ConfigError("classical_bound: r outside [0, n]");
  const double tail = tail_sums(sigma)(r);
  if (tail == 0.0) return 0.0;
  return tail * std::sqrt(control_energy(u, T, c));
}

namespace {

struct ChainScratch {
  std::vector<Vector> z, fz, y;
  Vector w, g, tmp;
};

}  // namespace

ChainResult gap_bound(const StochasticSystem& sys, const BalancedRealization& bal, const GramianPair& pair, Index r,
                      const ControlSignal& u, const NoiseBundle& noise, const SimulationOptions& sim) {
  const Index n = sys.n();
  if (r < 1 || r >= n) {
    std::ostringstream os;
    os << "gap bound needs 1 <= r < n (r = " << r << ", n = " << n << ")";
    throw ConfigError(os.str());
  }
  if (bal.sigma.size() != n) throw ConfigError("balanced realization does not match the system");
  const Index L = n - r;  // number of links

  std::vector<Dynamics> chain;
  std::vector<Matrix> V;
  std::vector<Vector> x0;
  chain.reserve(static_cast<std::size_t>(L + 1));
  for (Index k = r; k < n; ++k) {
    const ReducedModel red(k, bal.S_inv.leftCols(k), bal.S.topRows(k).transpose(), sys, {});
    chain.emplace_back(red);
    V.push_back(red.V());
    x0.push_back(Vector::Zero(k));
  }
  chain.emplace_back(sys);
  x0.push_back(Vector::Zero(n));

  const Matrix Pinv = linalg::spd_inverse(pair.P);
  const Matrix Q = linalg::sym(pair.Q);
  const double c2 = pair.c2;
  const double c = error_weight(pair.c1, pair.c2);
  const TimeGrid& grid = noise.grid();
  const Nonlinearity& f = sys.f();
  const bool linear = f.kind() == NonlinearityKind::Zero;

  // per path: q_j, p_j, link_j (j = 1..L), then ||y - y_r||^2, ||y||^2
  const Index width = 3 * L + 2;
  std::vector<Vector> acc(static_cast<std::size_t>(noise.n_paths()), Vector::Zero(width));

  auto observer = [&](Index path, Index k, const std::vector<Vector>& xs) {
    thread_local ChainScratch s;
    s.z.resize(static_cast<std::size_t>(L + 1));
    s.fz.resize(static_cast<std::size_t>(L + 1));
    s.y.resize(static_cast<std::size_t>(L + 1));
    for (Index j = 0; j <= L; ++j) {
      const std::size_t i = static_cast<std::size_t>(j);
      if (j < L)
        s.z[i].noalias() = V[i] * xs[i];
      else
        s.z[i] = xs[i];
      if (linear)
        s.fz[i].setZero(n);
      else
        f.evaluate(s.z[i], s.fz[i]);
      s.y[i].noalias() = chain[i].C() * xs[i];
    }
    const double weight = ((k == 0 || k == grid.steps) ? 0.5 : 1.0) * grid.dt * std::exp(c * (grid.T - grid.t(k)));
    Vector& a = acc[static_cast<std::size_t>(path)];
    for (Index j = 1; j <= L; ++j) {
      const std::size_t hi = static_cast<std::size_t>(j), lo = hi - 1;
      s.w = s.z[hi] - s.z[lo];
      s.g = s.fz[hi] - s.fz[lo];
      s.tmp.noalias() = Q * s.w;
      const double q = s.g.dot(s.tmp) - c2 * s.w.dot(s.tmp);
      s.w = s.z[hi] + s.z[lo];
      s.g = s.fz[hi] + s.fz[lo];
      s.tmp.noalias() = Pinv * s.w;
      const double p = s.g.dot(s.tmp) - c2 * s.w.dot(s.tmp);
      a(3 * (j - 1)) += weight * q;
      a(3 * (j - 1) + 1) += weight * p;
      a(3 * (j - 1) + 2) += weight * (s.y[hi] - s.y[lo]).squaredNorm();
    }
    a(3 * L) += weight * (s.y[static_cast<std::size_t>(L)] - s.y[0]).squaredNorm();
    a(3 * L + 1) += weight * s.y[static_cast<std::size_t>(L)].squaredNorm();
  };

  const CoupledResult res = simulate_coupled(chain, x0, u, noise, observer, sim);
  if (res.n_diverged > 0) {
    Index worst = 0;
    for (Index s = 0; s <= L; ++s)
      if (res.per_system[static_cast<std::size_t>(s)] > 0) {
        worst = s;
        break;
      }
    std::ostringstream os;
    os << "simulation of the order-" << r + worst << (r + worst == n ? " (full)" : " reduced") << " model diverged on "
       << res.per_system[static_cast<std::size_t>(worst)] << " path(s)";
    throw DivergenceError(os.str());
  }

  ChainResult out;
  out.r = r;
  out.control_id = u.id();
  out.c = c;
  const Index P = noise.n_paths();
  out.n_used = P;
  const double m = static_cast<double>(P);
  Vector mean = Vector::Zero(width);
  for (const Vector& a : acc) mean += a;
  mean /= m;

  const double u_energy = control_energy(u, grid.T, c);
  std::vector<double> col(static_cast<std::size_t>(P));
  const std::vector<char> none;
  auto column = [&](Index idx) {
    for (Index p = 0; p < P; ++p) col[static_cast<std::size_t>(p)] = acc[static_cast<std::size_t>(p)](idx);
    return col;
  };

  for (Index j = 1; j <= L; ++j) {
    GapSummand gs;
    gs.k = r + j;
    gs.sigma = bal.sigma(gs.k - 1);
    gs.q_gap = mean(3 * (j - 1));
    gs.p_gap = mean(3 * (j - 1) + 1);
    gs.u_energy = u_energy;
    const double s2 = gs.sigma * gs.sigma;
    gs.radicand = 2.0 * gs.q_gap + s2 * (2.0 * gs.p_gap + 4.0 * u_energy);
    gs.clipped = gs.radicand < 0.0;
    gs.value = gs.clipped ? 0.0 : std::sqrt(gs.radicand);
    out.clipped = out.clipped || gs.clipped;
    out.gap_bound += gs.value;
    out.summands.push_back(gs);
    out.links.push_back(sqrt_mean(column(3 * (j - 1) + 2), none));
    out.link_sum += out.links.back().value;
  }

  // delta-method standard errors of the two sums of square roots
  double sg = 0.0, sg2 = 0.0, sl = 0.0, sl2 = 0.0;
  for (Index p = 0; p < P; ++p) {
    const Vector& a = acc[static_cast<std::size_t>(p)];
    double psi_g = 0.0, psi_l = 0.0;
    for (Index j = 1; j <= L; ++j) {
      const GapSummand& gs = out.summands[static_cast<std::size_t>(j - 1)];
      const double s2 = gs.sigma * gs.sigma;
      if (gs.value > 0.0) {
        const double dev = 2.0 * (a(3 * (j - 1)) - gs.q_gap) + 2.0 * s2 * (a(3 * (j - 1) + 1) - gs.p_gap);
        psi_g += dev / (2.0 * gs.value);
      }
      const double lv = out.links[static_cast<std::size_t>(j - 1)].value;
      if (lv > 0.0) psi_l += (a(3 * (j - 1) + 2) - lv * lv) / (2.0 * lv);
    }
    sg += psi_g;
    sg2 += psi_g * psi_g;
    sl += psi_l;
    sl2 += psi_l * psi_l;
  }
  if (P > 1) {
    out.gap_bound_se = std::sqrt(std::max(0.0, (sg2 - sg * sg / m) / (m - 1.0)) / m);
    out.link_sum_se = std::sqrt(std::max(0.0, (sl2 - sl * sl / m) / (m - 1.0)) / m);
  }

  const std::vector<double> err = column(3 * L);
  const std::vector<double> yn = column(3 * L + 1);
  out.error = sqrt_mean(err, none);
  out.y_norm = sqrt_mean(yn, none);
  out.rel_error = sqrt_ratio(err, yn, none);
  return out;
}

void ErrorReport::write_csv(std::ostream& os) const {
  io::CsvWriter w(os, {"r", "control_id", "rel_error", "mc_se", "classical_bound", "gap_bound", "ratio",
                       "excluded_paths"});
  for (const ErrorRow& row : rows) {
    w.row({std::to_string(row.r), row.control_id, io::num(row.rel_error), io::num(row.mc_se),
           io::num(row.classical_bound), row.gap_bound ? io::num(*row.gap_bound) : std::string(),
           io::num(row.ratio), std::to_string(row.excluded_paths)});
  }
}

ErrorReport error_table(const StochasticSystem& sys, const BalancedRealization& bal, const GramianPair& pair,
                        const std::vector<Index>& r_list, const std::vector<ControlSignal>& controls,
                        const NoiseBundle& noise, const ErrorTableOptions& opts) {
  if (r_list.empty()) throw ConfigError("error table needs at least one reduced order");
  if (controls.empty()) throw ConfigError("error table needs at least one control");
  ErrorReport report;
  report.nonlinearity = sys.f().name();
  report.c1 = pair.c1;
  report.c2 = pair.c2;
  report.c = error_weight(pair.c1, pair.c2);
  report.seed = noise.seed();
  report.T = noise.grid().T;
  report.dt = noise.grid().dt;
  report.n_paths = noise.n_paths();
  const double c = report.c;
  const Vector x0 = Vector::Zero(sys.n());

  for (const ControlSignal& u : controls) {
    const Ensemble full = simulate(sys, u, noise, x0, false, opts.sim);
    const NormEstimate y_norm = weighted_l2T_norm(full, c);
    for (Index r : r_list) {
      const ReducedModel red = truncate(sys, bal, r, opts.balancing);
      const Ensemble reduced = simulate(red, u, noise, Vector::Zero(red.r()), false, opts.sim);
      ErrorRow row;
      row.r_requested = r;
      row.r = red.r();
      row.control_id = u.id();
      row.warnings = red.warnings();
      Index excluded = 0;
      for (std::size_t i = 0; i < full.diverged.size(); ++i)
        if (full.diverged[i] || reduced.diverged[i]) ++excluded;
      row.excluded_paths = excluded;
      const RatioEstimate rel = relative_error(full, reduced, c);
      row.rel_error = rel.value;
      row.mc_se = rel.value * rel.rel_se;
      row.classical_bound_abs = classical_bound(bal.sigma, red.r(), u, report.T, c);
      row.classical_bound = row.classical_bound_abs / y_norm.value;
      row.ratio = row.classical_bound > 0.0 ? row.rel_error / row.classical_bound
                                            : std::numeric_limits<double>::quiet_NaN();
      if (opts.with_gap_bound && red.r() < sys.n()) {
        const ChainResult chain = gap_bound(sys, bal, pair, red.r(), u, noise, opts.sim);
        row.gap_bound_abs = chain.gap_bound;
        row.gap_bound = chain.gap_bound / y_norm.value;
        row.gap_clipped = chain.clipped;
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

}  // namespace stochbt
