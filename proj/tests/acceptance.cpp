// Acceptance suite: one PASS/FAIL line per criterion, details indented below.

#include "stochbt/balancing.hpp"
#include "stochbt/diagnostics.hpp"
#include "stochbt/error_bounds.hpp"
#include "stochbt/gramians.hpp"
#include "stochbt/model.hpp"
#include "stochbt/simulate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace stochbt;

namespace {

constexpr Index kN = 20;
constexpr Index kPaths = 1000;
constexpr std::uint64_t kSeed = 20240601;

Matrix K2() { return (Matrix(2, 2) << 1.0, -0.5, -0.5, 1.0).finished(); }

StochasticSystem diffusion(Index n, const Nonlinearity& f) {
  return build_reaction_diffusion(n, 1.0, f, {NoiseProfile::four_sin(), NoiseProfile::four_cos()}, K2());
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

struct Line {
  int id;
  std::string title;
  bool pass = true;
  std::vector<std::string> notes{};

  void note(const std::string& s) { notes.push_back(s); }
  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    note(std::string(ok ? "ok   " : "FAIL ") + what);
  }
};

std::vector<Line> g_lines;

void emit(const Line& l) {
  std::printf("[%s] criterion %d: %s\n", l.pass ? "PASS" : "FAIL", l.id, l.title.c_str());
  for (const auto& n : l.notes) std::printf("         %s\n", n.c_str());
  std::fflush(stdout);
  g_lines.push_back(l);
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

struct Prepared {
  StochasticSystem sys;
  GramianComputation g;
  double seconds = 0.0;
  std::optional<BalancedRealization> bal;
};

std::map<std::string, Prepared>& cache() {
  static std::map<std::string, Prepared> c;
  return c;
}

Prepared& prepared(const std::string& key) {
  auto it = cache().find(key);
  if (it != cache().end()) return it->second;
  Nonlinearity f = key == "F1" ? Nonlinearity::f1(0.1) : key == "F2" ? Nonlinearity::f2() : Nonlinearity::zero();
  StochasticSystem sys = diffusion(kN, f);
  const double c = default_shift(f);
  Timer t;
  GramianComputation g = compute_gramians(sys, c, c);
  const double secs = t.seconds();
  Prepared p{std::move(sys), std::move(g), secs, std::nullopt};
  p.bal.emplace(balance(p.sys, p.g.pair.P, p.g.pair.Q));
  return cache().emplace(key, std::move(p)).first->second;
}

void criterion1() {
  Line l{1, "Gramian certification (n = 20, F1 and F2)"};
  for (const char* key : {"F1", "F2"}) {
    const Prepared& p = prepared(key);
    const double rel = p.g.pair.q_residual / (p.sys.C().transpose() * p.sys.C()).norm();
    l.require(rel <= 1e-9, fmt("%s c1 = c2 = %.6f: Q residual %.2e relative (<= 1e-9)", key, p.g.pair.c1, rel));
    l.require(p.g.pair.cert_P >= -1e-7, fmt("%s cert_P = %.3e (>= -1e-7), tr P = %.6g", key, p.g.pair.cert_P,
                                            p.g.p_stats.trace));
    l.require(p.seconds <= 120.0, fmt("%s Gramians in %.1f s (<= 120 s)", key, p.seconds));
  }
  emit(l);
}

struct BalanceCheck {
  double id_P = 0.0, id_Q = 0.0, biorth = 0.0, eig = 0.0;
  Index worst_r = 0;
};

BalanceCheck check_balancing(const StochasticSystem& sys, const Matrix& P, const Matrix& Q,
                             const BalancedRealization& bal) {
  BalanceCheck c;
  const Matrix Sigma = bal.sigma.asDiagonal();
  c.id_P = linalg::relative_frobenius(bal.S * P * bal.S.transpose(), Sigma);
  c.id_Q = linalg::relative_frobenius(bal.S_inv.transpose() * Q * bal.S_inv, Sigma);
  for (Index r = 1; r <= sys.n(); ++r) {
    const ReducedModel red = truncate(sys, bal, r);
    const double e = (red.W().transpose() * red.V() - Matrix::Identity(red.r(), red.r())).cwiseAbs().maxCoeff();
    if (e > c.biorth) {
      c.biorth = e;
      c.worst_r = r;
    }
  }
  const Eigen::VectorXcd ev = (P * Q).eigenvalues();
  std::vector<double> lam;
  for (Index i = 0; i < ev.size(); ++i) lam.push_back(ev(i).real());
  std::sort(lam.rbegin(), lam.rend());
  for (Index i = 0; i < bal.sigma.size(); ++i)
    c.eig = std::max(c.eig, std::abs(bal.sigma(i) * bal.sigma(i) - lam[static_cast<std::size_t>(i)]) / lam.front());
  return c;
}

void criterion2() {
  Line l{2, "balancing identities"};
  auto run = [&](const std::string& label, const StochasticSystem& sys, const Matrix& P, const Matrix& Q,
                 const BalancedRealization& bal) {
    Timer t;
    const BalanceCheck c = check_balancing(sys, P, Q, bal);
    l.require(c.id_P <= 1e-8, fmt("%s: ||S P S^T - Sigma|| rel = %.2e", label.c_str(), c.id_P));
    l.require(c.id_Q <= 1e-8, fmt("%s: ||S^-T Q S^-1 - Sigma|| rel = %.2e", label.c_str(), c.id_Q));
    l.require(c.biorth <= 1e-10,
              fmt("%s: max_r |W_r^T V_r - I| = %.2e (worst r = %ld)", label.c_str(), c.biorth, (long)c.worst_r));
    l.require(c.eig <= 1e-8, fmt("%s: sigma^2 vs eig(PQ), normwise rel = %.2e", label.c_str(), c.eig));
    l.note(fmt("%s: %ld HSV(s) floored; checks took %.2f s", label.c_str(), (long)bal.floored, t.seconds()));
  };
  for (const char* key : {"F1", "F2"}) {
    const Prepared& p = prepared(key);
    run(std::string(key) + " pipeline pair", p.sys, p.g.pair.P, p.g.pair.Q, *p.bal);
  }
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  auto spd = [&] {
    Matrix G(kN, kN);
    for (Index i = 0; i < kN; ++i)
      for (Index j = 0; j < kN; ++j) G(i, j) = nd(gen);
    return Matrix(G * G.transpose() + 0.1 * Matrix::Identity(kN, kN));
  };
  const StochasticSystem sys = diffusion(kN, Nonlinearity::f2());
  const Matrix P = spd(), Q = spd();
  run("random SPD pair", sys, P, Q, balance(sys, P, Q));
  emit(l);
}

void criterion3() {
  Line l{3, "HSV decay sigma_10 / sigma_1 < 1e-3"};
  for (const char* key : {"F1", "F2"}) {
    const Vector& s = prepared(key).bal->sigma;
    const double q = s(9) / s(0);
    l.require(q < 1e-3, fmt("%s: sigma_1 = %.4e, sigma_10 = %.4e, ratio %.3e", key, s(0), s(9), q));
  }
  emit(l);
}

void criterion4() {
  Line l{4, "order-n reduced model reproduces the full output path-wise"};
  for (const char* key : {"F1", "F2"}) {
    const Prepared& p = prepared(key);
    const NoiseBundle noise(p.sys.K(), TimeGrid::make(1.0, 1e-3), 200, kSeed);
    const ReducedModel red = truncate(p.sys, *p.bal, kN);
    for (const ControlSignal& u : {ControlSignal::oscillating(), ControlSignal::smooth()}) {
      const Ensemble full = simulate(p.sys, u, noise, Vector::Zero(kN));
      const Ensemble rn = simulate(red, u, noise, Vector::Zero(kN));
      double worst = 0.0;
      for (std::size_t i = 0; i < full.outputs.size(); ++i) {
        const double e = std::sqrt(weighted_energy(full.outputs[i] - rn.outputs[i], noise.grid(), 0.0) /
                                   weighted_energy(full.outputs[i], noise.grid(), 0.0));
        worst = std::max(worst, e);
      }
      l.require(worst <= 1e-8 && full.excluded() == 0 && rn.excluded() == 0,
                fmt("%s %s: max path relative error %.2e over %ld paths", key, u.id().c_str(), worst,
                    (long)full.outputs.size()));
    }
  }
  emit(l);
}

void criterion5() {
  Line l{5, "linear case: error <= classical bound"};
  Timer t;
  const Prepared& p = prepared("Zero");
  const double dt = 2.5e-4;
  const NoiseBundle noise(p.sys.K(), TimeGrid::make(1.0, dt), kPaths, kSeed);
  l.note(fmt("f = 0, c1 = c2 = 0, %ld paths, dt = %.1e", (long)kPaths, dt));
  for (const ControlSignal& u : {ControlSignal::oscillating(), ControlSignal::smooth()}) {
    const Ensemble full = simulate(p.sys, u, noise, Vector::Zero(kN));
    for (Index r : {3, 6, 10}) {
      const ReducedModel red = truncate(p.sys, *p.bal, r);
      const Ensemble e = simulate(red, u, noise, Vector::Zero(red.r()));
      const NormEstimate d = weighted_l2T_distance(full, e, 0.0);
      const double cb = classical_bound(p.bal->sigma, red.r(), u, 1.0, 0.0);
      const double rel_se = d.value > 0.0 ? d.se / d.value : 0.0;
      l.require(d.value <= cb * (1.0 + 3.0 * rel_se) && d.excluded == 0,
                fmt("%s r = %ld: error %.4e (se %.1e) vs bound %.4e, ratio %.3f, excluded %ld", u.id().c_str(),
                    (long)r, d.value, d.se, cb, d.value / cb, (long)d.excluded));
    }
  }
  l.require(t.seconds() <= 300.0, fmt("runtime %.1f s (<= 300 s)", t.seconds()));
  emit(l);
}

void criterion6() {
  Line l{6, "nonlinear error corridor (F1, F2; both controls; dt = 1e-3)"};
  Timer t;
  for (const char* key : {"F1", "F2"}) {
    const Prepared& p = prepared(key);
    const NoiseBundle noise(p.sys.K(), TimeGrid::make(1.0, 1e-3), kPaths, kSeed);
    const ErrorReport rep = error_table(p.sys, *p.bal, p.g.pair, {3, 6, 10},
                                        {ControlSignal::oscillating(), ControlSignal::smooth()}, noise);
    for (const std::string id : {"oscillating", "smooth"}) {
      std::vector<const ErrorRow*> rows;
      for (const ErrorRow& r : rep.rows)
        if (r.control_id == id) rows.push_back(&r);
      const bool dec = rows[0]->rel_error > rows[1]->rel_error && rows[1]->rel_error > rows[2]->rel_error;
      l.require(dec, fmt("%s %s: rel errors %.3e > %.3e > %.3e", key, id.c_str(), rows[0]->rel_error,
                         rows[1]->rel_error, rows[2]->rel_error));
      l.require(rows[2]->rel_error < 1e-2, fmt("%s %s: r = 10 rel error %.3e < 1e-2", key, id.c_str(),
                                               rows[2]->rel_error));
      for (int i : {0, 1})
        l.require(rows[i]->ratio >= 0.05 && rows[i]->ratio <= 5.0,
                  fmt("%s %s r = %ld: error / classical bound = %.3f in [0.05, 5]", key, id.c_str(),
                      (long)rows[i]->r, rows[i]->ratio));
      Index excl = 0;
      for (const ErrorRow* r : rows) excl += r->excluded_paths;
      l.note(fmt("%s %s: %ld excluded path(s)", key, id.c_str(), (long)excl));
    }
  }
  l.require(t.seconds() <= 900.0, fmt("runtime %.1f s (<= 900 s)", t.seconds()));
  emit(l);
}

void criteria7and8() {
  const Prepared& p = prepared("F2");
  const NoiseBundle noise(p.sys.K(), TimeGrid::make(1.0, 1e-3), kPaths, kSeed);
  Timer t;
  const ChainResult ch = gap_bound(p.sys, *p.bal, p.g.pair, 6, ControlSignal::oscillating(), noise);
  const double secs = t.seconds();

  Line l7{7, "telescoping: ||y - y_r|| <= sum of link norms (F2, oscillating, r = 6)"};
  const double rel_se = ch.link_sum > 0.0 ? ch.link_sum_se / ch.link_sum : 0.0;
  l7.require(ch.error.value <= ch.link_sum * (1.0 + 3.0 * rel_se),
             fmt("error %.4e (se %.1e) vs link sum %.4e (se %.1e)", ch.error.value, ch.error.se, ch.link_sum,
                 ch.link_sum_se));
  l7.note(fmt("%ld paths used, chain simulated in %.1f s", (long)ch.n_used, secs));
  emit(l7);

  Line l8{8, "gap-augmented bound"};
  Index clipped = 0;
  for (const GapSummand& s : ch.summands) clipped += s.clipped ? 1 : 0;
  l8.require(ch.gap_bound >= ch.error.value - 3.0 * ch.error.se,
             fmt("F2 oscillating r = 6: gap bound %.4e (se %.1e) vs error %.4e (se %.1e)", ch.gap_bound,
                 ch.gap_bound_se, ch.error.value, ch.error.se));
  l8.note(fmt("%ld of %ld summands had a negative radicand (clipped at 0)", (long)clipped,
              (long)ch.summands.size()));

  const Prepared& z = prepared("Zero");
  const NoiseBundle small(z.sys.K(), TimeGrid::make(1.0, 2.5e-4), 50, kSeed);
  const ChainResult lin = gap_bound(z.sys, *z.bal, z.g.pair, 6, ControlSignal::oscillating(), small);
  const double cb = classical_bound(z.bal->sigma, 6, ControlSignal::oscillating(), 1.0, 0.0);
  const double rel = std::abs(lin.gap_bound - cb) / cb;
  l8.require(rel <= 1e-6, fmt("f = 0, c2 = 0: gap bound %.10e vs classical %.10e, rel diff %.1e", lin.gap_bound, cb,
                              rel));
  emit(l8);
}

void criterion9() {
  Line l{9, "mean-square stability"};
  StochasticSystem f2 = diffusion(kN, Nonlinearity::f2());
  const StochasticSystem uncontrolled(f2.A(), Matrix::Zero(kN, f2.m()), f2.C(), f2.N(), f2.K(), f2.f());
  std::mt19937_64 gen(kSeed);
  std::normal_distribution<double> nd;
  Vector x0(kN);
  for (Index i = 0; i < kN; ++i) x0(i) = nd(gen);
  x0.normalize();
  const NoiseBundle noise(f2.K(), TimeGrid::make(1.0, 1e-3), kPaths, kSeed);
  const DecayEstimate d = estimate_ms_decay(uncontrolled, x0, noise);
  const DecayCeiling c = decay_ceiling(uncontrolled, 1.0, 1.0);
  l.require(d.rate < 0.0, fmt("F2, B = 0, random unit x0: fitted rate %.4f (se %.3f), ceiling %.4f, excluded %ld",
                              d.rate, d.se, c.ceiling, (long)d.excluded));

  for (double nu : {0.8}) {
    const StochasticSystem s(Matrix::Constant(1, 1, -1.0), Matrix::Zero(1, 1), Matrix::Ones(1, 1),
                             {Matrix::Constant(1, 1, nu)}, Matrix::Ones(1, 1), Nonlinearity::zero());
    const NoiseBundle sn(s.K(), TimeGrid::make(1.0, 1e-3), 4 * kPaths, kSeed + 1);
    const DecayEstimate ds = estimate_ms_decay(s, Vector::Ones(1), sn);
    const double expect = -2.0 + nu * nu;
    l.require(std::abs(ds.rate - expect) <= 3.0 * ds.se,
              fmt("scalar nu = %.1f: fitted %.4f (se %.3f) vs -2 + nu^2 = %.4f", nu, ds.rate, ds.se, expect));
  }
  emit(l);
}

void criterion10() {
  Line l{10, "quadratic-form identity (2-d, correlated noise)"};
  const StochasticSystem sys = diffusion(2, Nonlinearity::f2());
  Vector x0(2);
  x0 << 1.0, -0.5;
  const NoiseBundle noise(sys.K(), TimeGrid::make(1.0, 1e-3), 4 * kPaths, kSeed);
  const IdentityCheckReport rep = quadratic_form_identity_check(sys, x0, ControlSignal::oscillating(), noise);
  l.require(rep.passed && rep.max_z <= 3.0, fmt("max |z| = %.3f over %ld check times, %ld paths", rep.max_z,
                                                (long)rep.points.size(), (long)rep.n_used));
  for (const auto& pt : rep.points)
    l.note(fmt("t = %.3f: lhs %.6f, rhs %.6f, discretization bias %.2e, se %.2e", pt.t, pt.lhs, pt.rhs, pt.bias,
               pt.se));
  emit(l);
}

void criterion11() {
  Line l{11, "nonlinearity constants"};
  const Index samples = 100000;
  ScanOptions so;
  so.seed = kSeed;
  for (const Nonlinearity& f : {Nonlinearity::f1(0.1), Nonlinearity::f2(), Nonlinearity::f3()}) {
    for (Index n : {1, 5}) {
      const Matrix I = Matrix::Identity(n, n);
      const GapReport m = scan_monotonicity_samples(GapForm(f, I, false, f.c_f()), samples, so);
      l.require(m.nonpositive(), fmt("%s n = %ld: c_f = %.5f, %ld violations in %ld samples", f.name().c_str(),
                                     (long)n, f.c_f(), (long)m.n_positive, (long)samples));
      const GapReport lm =
          scan_lipschitz_samples(GapForm(f, I, false, *f.c_lip_minus()), GapSign::Minus, samples, so);
      l.require(lm.nonpositive(), fmt("%s n = %ld: minus form c = %.5f, %ld violations in %ld pairs",
                                      f.name().c_str(), (long)n, *f.c_lip_minus(), (long)lm.n_positive, (long)samples));
      if (f.c_lip_plus()) {
        const GapReport lp =
            scan_lipschitz_samples(GapForm(f, I, false, *f.c_lip_plus()), GapSign::Plus, samples, so);
        l.require(lp.nonpositive(), fmt("%s n = %ld: plus form c = %.5f, %ld violations in %ld pairs",
                                        f.name().c_str(), (long)n, *f.c_lip_plus(), (long)lp.n_positive,
                                        (long)samples));
      }
    }
  }
  const Nonlinearity f1 = Nonlinearity::f1(0.1);
  const Vector x = Vector::Ones(1);
  const Vector z = Vector::Constant(1, 1e-3 - 1.0);
  for (double c : {0.30333, 10.0, 1000.0}) {
    const double g = lipschitz_gap(f1, Matrix::Identity(1, 1), false, GapSign::Plus, x, z, c);
    l.require(g > 0.0, fmt("F1 plus form at x = 1, z = eps - 1, eps = 1e-3, c = %g: gap %.4e > 0", c, g));
  }
  const std::vector<std::pair<Nonlinearity, double>> shifts{
      {Nonlinearity::f1(0.1), 0.30333}, {Nonlinearity::f2(), 1.0}, {Nonlinearity::f3(), 1.0}};
  for (const auto& [f, c2] : shifts) {
    const HessianCheck h = hessian_local_max_check(f, c2, kN);
    l.require(h.passes, fmt("Hessian check %s at c2 = %g: f'(0) = %g I, c2_tilde = %g (strict > 0 required)",
                            f.name().c_str(), c2, h.diagonal, h.c2_tilde));
  }
  emit(l);
}

void criterion12() {
  Line l{12, "monotonicity gap grid for F2 with the fixed 2 x 2 Q"};
  const Matrix Q = (Matrix(2, 2) << 0.49426, 0.58159, 0.58159, 0.68542).finished();
  const GapReport r = scan_monotonicity_grid(GapForm(Nonlinearity::f2(), Q, false, 1.0), 400);
  l.require(r.positive_fraction < 0.05, fmt("positive fraction %.4f on a 400^2 grid over [-2, 2]^2",
                                             r.positive_fraction));
  l.require(r.max_positive < 0.05 * std::abs(r.min_value),
            fmt("max positive %.4e vs 5%% of |min| = %.4e", r.max_positive, 0.05 * std::abs(r.min_value)));
  emit(l);
}

}  // namespace

int main() {
  Timer total;
  const std::vector<std::pair<std::vector<int>, void (*)()>> steps{
      {{1}, criterion1},   {{2}, criterion2},   {{3}, criterion3},      {{4}, criterion4},
      {{5}, criterion5},   {{6}, criterion6},   {{7, 8}, criteria7and8}, {{9}, criterion9},
      {{10}, criterion10}, {{11}, criterion11}, {{12}, criterion12}};
  for (const auto& [ids, step] : steps) {
    try {
      step();
    } catch (const std::exception& e) {
      for (int id : ids) {
        if (std::any_of(g_lines.begin(), g_lines.end(), [id](const Line& l) { return l.id == id; })) continue;
        Line l{id, "aborted"};
        l.require(false, std::string("exception: ") + e.what());
        emit(l);
      }
    }
  }
  int passed = 0;
  for (const Line& l : g_lines) passed += l.pass ? 1 : 0;
  std::printf("summary: %d of %zu criteria passed (%.0f s)\n", passed, g_lines.size(), total.seconds());
  return passed == static_cast<int>(g_lines.size()) ? 0 : 1;
}
