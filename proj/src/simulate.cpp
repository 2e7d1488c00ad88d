#include "stochbt/simulate.hpp"

#include "stochbt/exceptions.hpp"
#include "stochbt/lyapunov.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

namespace stochbt {

TimeGrid TimeGrid::make(double T, double dt) {
  if (!(T > 0.0) || !(dt > 0.0) || !std::isfinite(T) || !std::isfinite(dt))
    throw ConfigError("T and dt must be positive");
  const double ratio = T / dt;
  const double steps = std::round(ratio);
  if (steps < 1.0 || std::abs(ratio - steps) > 1e-9 * std::max(1.0, ratio)) {
    std::ostringstream os;
    os << "dt = " << dt << " does not divide T = " << T;
    throw ConfigError(os.str());
  }
  TimeGrid g;
  g.T = T;
  g.steps = static_cast<Index>(steps);
  g.dt = T / steps;
  return g;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t path_seed(std::uint64_t seed, Index path) {
  return splitmix64(splitmix64(seed) ^ splitmix64(static_cast<std::uint64_t>(path) + 0x632BE59BD9B4E019ULL));
}

NoiseBundle::NoiseBundle(const Matrix& K, TimeGrid grid, Index n_paths, std::uint64_t seed)
    : grid_(grid), n_paths_(n_paths), seed_(seed) {
  if (K.rows() != K.cols()) throw ConfigError("K must be square");
  if (n_paths < 1) throw ConfigError("n_paths must be positive");
  sqrtK_ = linalg::sqrt_psd(K, StochasticSystem::tol_psd * std::max(1.0, K.norm()));
}

void NoiseBundle::increments(Index path, Matrix& out) const {
  const Index d = sqrtK_.rows();
  out.resize(d, grid_.steps);
  boost::random::mt19937_64 engine(path_seed(seed_, path));
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  for (Index k = 0; k < grid_.steps; ++k)
    for (Index i = 0; i < d; ++i) out(i, k) = normal(engine);
  out = std::sqrt(grid_.dt) * (sqrtK_ * out);
}

Matrix NoiseBundle::increments(Index path) const {
  Matrix out;
  increments(path, out);
  return out;
}

struct Dynamics::Data {
  Matrix A, B, C;
  std::vector<Matrix> N;
  std::vector<Vector> N_diag;  // filled when N_i is diagonal
  std::vector<char> is_diag;
  Nonlinearity f = Nonlinearity::zero();
  bool reduced = false;
  Matrix V, Wt;

  void classify_noise() {
    is_diag.resize(N.size());
    N_diag.resize(N.size());
    for (std::size_t i = 0; i < N.size(); ++i) {
      const Matrix& Ni = N[i];
      Matrix off = Ni;
      off.diagonal().setZero();
      is_diag[i] = off.isZero(0.0) ? 1 : 0;
      if (is_diag[i]) N_diag[i] = Ni.diagonal();
    }
  }
};

Dynamics::Dynamics(const StochasticSystem& sys) {
  auto data = std::make_shared<Data>();
  data->A = sys.A();
  data->B = sys.B();
  data->C = sys.C();
  data->N = sys.N();
  data->f = sys.f();
  data->classify_noise();
  data_ = std::move(data);
}

Dynamics::Dynamics(const ReducedModel& red) {
  auto data = std::make_shared<Data>();
  data->A = red.A();
  data->B = red.B();
  data->C = red.C();
  data->N = red.N();
  data->f = red.f_full();
  data->reduced = true;
  data->V = red.V();
  data->Wt = red.W().transpose();
  data->classify_noise();
  data_ = std::move(data);
}

Index Dynamics::dim() const { return data_->A.rows(); }
Index Dynamics::m() const { return data_->B.cols(); }
Index Dynamics::p() const { return data_->C.rows(); }
Index Dynamics::d() const { return static_cast<Index>(data_->N.size()); }
const Matrix& Dynamics::A() const { return data_->A; }
const Matrix& Dynamics::C() const { return data_->C; }
const std::vector<Matrix>& Dynamics::N() const { return data_->N; }

void Dynamics::nonlinearity(const Vector& x, Vector& out, DynamicsWorkspace& ws) const {
  const Data& D = *data_;
  if (D.f.kind() == NonlinearityKind::Zero) {
    out.setZero(x.size());
    return;
  }
  if (!D.reduced) {
    D.f.evaluate(x, out);
    return;
  }
  ws.full_x.noalias() = D.V * x;
  D.f.evaluate(ws.full_x, ws.full_f);
  out.noalias() = D.Wt * ws.full_f;
}

void Dynamics::drift(const Vector& x, const Eigen::Ref<const Vector>& u, Vector& out, DynamicsWorkspace& ws) const {
  const Data& D = *data_;
  out.noalias() = D.A * x;
  out.noalias() += D.B * u;
  if (D.f.kind() != NonlinearityKind::Zero) {
    nonlinearity(x, ws.tmp, ws);
    out += ws.tmp;
  }
}

void Dynamics::add_noise(const Vector& x, const Eigen::Ref<const Vector>& dM, Vector& out) const {
  const Data& D = *data_;
  for (std::size_t i = 0; i < D.N.size(); ++i) {
    const double w = dM(static_cast<Index>(i));
    if (D.is_diag[i])
      out.array() += w * (D.N_diag[i].array() * x.array());
    else
      out.noalias() += w * (D.N[i] * x);
  }
}

void Dynamics::lift(const Vector& x, Vector& out) const {
  if (data_->reduced)
    out.noalias() = data_->V * x;
  else
    out = x;
}

Index resolve_workers(Index requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("STOCHBT_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<Index>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<Index>(hw) : 1;
}

void parallel_for(Index count, Index workers, const std::function<void(Index)>& fn) {
  workers = std::max<Index>(1, std::min(workers, count));
  if (workers == 1) {
    for (Index i = 0; i < count; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (Index w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (Index i = w; i < count && !failed.load(); i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

CoupledResult simulate_coupled(const std::vector<Dynamics>& systems, const std::vector<Vector>& x0,
                               const ControlSignal& u, const NoiseBundle& noise, const PathObserver& observer,
                               const SimulationOptions& opts, Index begin, Index end) {
  if (end < 0 || end > noise.n_paths()) end = noise.n_paths();
  begin = std::clamp<Index>(begin, 0, end);
  if (systems.empty()) throw ConfigError("no systems to simulate");
  if (x0.size() != systems.size()) throw ConfigError("one initial state per system is required");
  for (std::size_t s = 0; s < systems.size(); ++s) {
    if (x0[s].size() != systems[s].dim()) throw ConfigError("initial state has the wrong dimension");
    if (systems[s].m() != u.dim()) throw ConfigError("control dimension does not match B");
    if (systems[s].d() != noise.d()) throw ConfigError("noise dimension does not match the number of N_i");
  }
  const TimeGrid& grid = noise.grid();
  Matrix U(u.dim(), grid.steps + 1);
  for (Index k = 0; k <= grid.steps; ++k) {
    const Vector uk = u(grid.t(k));
    if (uk.size() != u.dim()) throw ConfigError("control returned a vector of the wrong size");
    U.col(k) = uk;
  }

  CoupledResult result;
  result.diverged.assign(static_cast<std::size_t>(noise.n_paths()), 0);
  const auto np = static_cast<std::size_t>(noise.n_paths());
  std::vector<std::vector<char>> blown_by(systems.size(), std::vector<char>(np, 0));
  const double dt = grid.dt;
  const double limit = opts.blowup_threshold;

  parallel_for(end - begin, resolve_workers(opts.workers), [&](Index offset) {
    const Index path = begin + offset;
    Matrix dM;
    noise.increments(path, dM);
    std::vector<Vector> x = x0;
    Vector drift, next;
    DynamicsWorkspace ws;
    if (observer) observer(path, 0, x);
    for (Index k = 0; k < grid.steps; ++k) {
      bool blown = false;
      for (std::size_t s = 0; s < systems.size(); ++s) {
        const Dynamics& sys = systems[s];
        sys.drift(x[s], U.col(k), drift, ws);
        next = x[s] + dt * drift;
        sys.add_noise(x[s], dM.col(k), next);
        x[s].swap(next);
        const double nrm = x[s].norm();
        if (!(nrm <= limit)) {
          blown = true;
          blown_by[s][static_cast<std::size_t>(path)] = 1;
        }
      }
      if (blown) {
        result.diverged[static_cast<std::size_t>(path)] = 1;
        return;
      }
      if (observer) observer(path, k + 1, x);
    }
  });
  result.n_diverged = std::count(result.diverged.begin(), result.diverged.end(), 1);
  for (const auto& flags : blown_by) result.per_system.push_back(std::count(flags.begin(), flags.end(), 1));
  return result;
}

void stream_states(const Dynamics& dyn, const ControlSignal& u, const NoiseBundle& noise, const Vector& x0,
                   const PathVisitor& visit, Index batch, const SimulationOptions& opts) {
  batch = std::max<Index>(1, batch);
  const Index cols = noise.grid().steps + 1;
  std::vector<Matrix> states(static_cast<std::size_t>(batch));
  for (Index begin = 0; begin < noise.n_paths(); begin += batch) {
    const Index end = std::min(noise.n_paths(), begin + batch);
    for (Index i = 0; i < end - begin; ++i) states[static_cast<std::size_t>(i)].setZero(dyn.dim(), cols);
    auto observer = [&](Index path, Index k, const std::vector<Vector>& xs) {
      states[static_cast<std::size_t>(path - begin)].col(k) = xs[0];
    };
    const CoupledResult res = simulate_coupled({dyn}, {x0}, u, noise, observer, opts, begin, end);
    for (Index path = begin; path < end; ++path)
      visit(path, states[static_cast<std::size_t>(path - begin)], res.diverged[static_cast<std::size_t>(path)] != 0);
  }
}

Index Ensemble::excluded() const { return std::count(diverged.begin(), diverged.end(), 1); }

Ensemble simulate(const Dynamics& dyn, const ControlSignal& u, const NoiseBundle& noise, const Vector& x0,
                  bool store_states, const SimulationOptions& opts) {
  Ensemble ens;
  ens.grid = noise.grid();
  ens.n_paths = noise.n_paths();
  ens.dim = dyn.dim();
  ens.control_id = u.id();
  ens.seed = noise.seed();
  const Index cols = ens.grid.steps + 1;
  ens.outputs.assign(static_cast<std::size_t>(ens.n_paths), Matrix::Zero(dyn.p(), cols));
  if (store_states) ens.states.assign(static_cast<std::size_t>(ens.n_paths), Matrix::Zero(dyn.dim(), cols));
  const Matrix& C = dyn.C();
  auto observer = [&](Index path, Index k, const std::vector<Vector>& xs) {
    ens.outputs[static_cast<std::size_t>(path)].col(k).noalias() = C * xs[0];
    if (store_states) ens.states[static_cast<std::size_t>(path)].col(k) = xs[0];
  };
  const CoupledResult res = simulate_coupled({dyn}, {x0}, u, noise, observer, opts);
  ens.diverged = res.diverged;
  return ens;
}

Ensemble simulate(const StochasticSystem& sys, const ControlSignal& u, const NoiseBundle& noise, const Vector& x0,
                  bool store_states, const SimulationOptions& opts) {
  return simulate(Dynamics(sys), u, noise, x0, store_states, opts);
}

Ensemble simulate(const ReducedModel& red, const ControlSignal& u, const NoiseBundle& noise, const Vector& x0,
                  bool store_states, const SimulationOptions& opts) {
  return simulate(Dynamics(red), u, noise, x0, store_states, opts);
}

Matrix output_statistics(const Ensemble& ens) {
  const Index cols = ens.grid.steps + 1;
  const Index p = ens.outputs.empty() ? 0 : ens.outputs.front().rows();
  Matrix sum = Matrix::Zero(p, cols), sq = Matrix::Zero(p, cols);
  Index used = 0;
  for (Index i = 0; i < ens.n_paths; ++i) {
    if (ens.diverged[static_cast<std::size_t>(i)]) continue;
    const Matrix& Y = ens.outputs[static_cast<std::size_t>(i)];
    sum += Y;
    sq += Y.cwiseAbs2();
    ++used;
  }
  Matrix out(cols, 2 * p);
  for (Index j = 0; j < p; ++j) {
    for (Index k = 0; k < cols; ++k) {
      const double mean = used > 0 ? sum(j, k) / used : 0.0;
      const double var = used > 1 ? std::max(0.0, (sq(j, k) - used * mean * mean) / (used - 1)) : 0.0;
      out(k, 2 * j) = mean;
      out(k, 2 * j + 1) = std::sqrt(var);
    }
  }
  return out;
}

double weighted_energy(const Matrix& Y, const TimeGrid& grid, double c) {
  const Index cols = Y.cols();
  double acc = 0.0;
  for (Index k = 0; k < cols; ++k) {
    const double w = (k == 0 || k == cols - 1) ? 0.5 : 1.0;
    acc += w * Y.col(k).squaredNorm() * std::exp(c * (grid.T - grid.t(k)));
  }
  return acc * grid.dt;
}

NormEstimate sqrt_mean(const std::vector<double>& per_path, const std::vector<char>& skip) {
  NormEstimate est;
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < per_path.size(); ++i) {
    if (!skip.empty() && skip[i]) {
      ++est.excluded;
      continue;
    }
    sum += per_path[i];
    sq += per_path[i] * per_path[i];
    ++est.n_used;
  }
  if (est.n_used == 0) throw DivergenceError("every path diverged; no Monte Carlo estimate available");
  const double n = static_cast<double>(est.n_used);
  const double mean = sum / n;
  const double var = est.n_used > 1 ? std::max(0.0, (sq - n * mean * mean) / (n - 1.0)) : 0.0;
  const double se_mean = std::sqrt(var / n);
  est.value = std::sqrt(std::max(mean, 0.0));
  est.se = est.value > 0.0 ? se_mean / (2.0 * est.value) : 0.0;
  return est;
}

NormEstimate weighted_l2T_norm(const Ensemble& ens, double c) {
  std::vector<double> I(static_cast<std::size_t>(ens.n_paths), 0.0);
  for (Index i = 0; i < ens.n_paths; ++i)
    if (!ens.diverged[static_cast<std::size_t>(i)])
      I[static_cast<std::size_t>(i)] = weighted_energy(ens.outputs[static_cast<std::size_t>(i)], ens.grid, c);
  return sqrt_mean(I, ens.diverged);
}

namespace {

void check_paired(const Ensemble& a, const Ensemble& b) {
  if (a.n_paths != b.n_paths || a.grid.steps != b.grid.steps || a.seed != b.seed)
    throw ConfigError("ensembles were not simulated on the same noise bundle");
}

std::vector<char> union_skip(const Ensemble& a, const Ensemble& b) {
  std::vector<char> skip(a.diverged.size());
  for (std::size_t i = 0; i < skip.size(); ++i) skip[i] = (a.diverged[i] || b.diverged[i]) ? 1 : 0;
  return skip;
}

}  // namespace

NormEstimate weighted_l2T_distance(const Ensemble& a, const Ensemble& b, double c) {
  check_paired(a, b);
  const std::vector<char> skip = union_skip(a, b);
  std::vector<double> I(skip.size(), 0.0);
  for (std::size_t i = 0; i < skip.size(); ++i)
    if (!skip[i]) I[i] = weighted_energy(a.outputs[i] - b.outputs[i], a.grid, c);
  return sqrt_mean(I, skip);
}

RatioEstimate sqrt_ratio(const std::vector<double>& num, const std::vector<double>& den,
                         const std::vector<char>& skip) {
  if (num.size() != den.size()) throw ConfigError("sqrt_ratio: size mismatch");
  RatioEstimate est;
  double sn = 0.0, sd = 0.0;
  for (std::size_t i = 0; i < num.size(); ++i) {
    if (!skip.empty() && skip[i]) continue;
    sn += num[i];
    sd += den[i];
    ++est.n_used;
  }
  if (est.n_used == 0) throw DivergenceError("every path diverged; no Monte Carlo estimate available");
  const double n = static_cast<double>(est.n_used);
  const double mn = sn / n, md = sd / n;
  if (!(md > 0.0)) throw NumericalError("reference norm is zero; relative error undefined");
  est.value = std::sqrt(std::max(mn, 0.0) / md);
  if (mn > 0.0 && est.n_used > 1) {
    // log R = (log mn - log md) / 2; influence psi_i = (num_i/mn - den_i/md) / 2
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < num.size(); ++i) {
      if (!skip.empty() && skip[i]) continue;
      const double psi = 0.5 * (num[i] / mn - den[i] / md);
      s += psi;
      s2 += psi * psi;
    }
    const double var = std::max(0.0, (s2 - s * s / n) / (n - 1.0));
    est.rel_se = std::sqrt(var / n);
  }
  return est;
}

RatioEstimate relative_error(const Ensemble& full, const Ensemble& reduced, double c) {
  check_paired(full, reduced);
  const std::vector<char> skip = union_skip(full, reduced);
  std::vector<double> num(skip.size(), 0.0), den(skip.size(), 0.0);
  for (std::size_t i = 0; i < skip.size(); ++i) {
    if (skip[i]) continue;
    num[i] = weighted_energy(full.outputs[i] - reduced.outputs[i], full.grid, c);
    den[i] = weighted_energy(full.outputs[i], full.grid, c);
  }
  return sqrt_ratio(num, den, skip);
}

double control_energy(const ControlSignal& u, double T, double c) {
  if (u.kind() == ControlKind::Zero) return 0.0;
  auto integrand = [&](double s) { return u(s).squaredNorm() * std::exp(c * (T - s)); };
  double error = 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, 0.0, T, 15, 1e-13, &error);
}

DecayCeiling decay_ceiling(const StochasticSystem& sys, double c1, double c2) {
  LyapunovOperator op(sys, c1);
  const Matrix X = solve_equality(op, Matrix::Identity(sys.n(), sys.n())).X;
  const double kY = linalg::min_eig_sym(-op.apply(X));
  DecayCeiling out;
  out.beta = kY / linalg::max_eig_sym(X);
  out.ceiling = 2.0 * (c2 - c1) - out.beta;
  return out;
}

namespace {

double ls_slope(const std::vector<double>& t, const std::vector<double>& y) {
  const double n = static_cast<double>(t.size());
  double st = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    st += t[i];
    sy += y[i];
  }
  const double mt = st / n, my = sy / n;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    num += (t[i] - mt) * (y[i] - my);
    den += (t[i] - mt) * (t[i] - mt);
  }
  return num / den;
}

}  // namespace

DecayEstimate estimate_ms_decay(const StochasticSystem& sys, const Vector& x0, const NoiseBundle& noise,
                                const SimulationOptions& opts, Index jackknife_groups) {
  if (x0.size() != sys.n()) throw ConfigError("x0 has the wrong dimension");
  const TimeGrid& grid = noise.grid();
  const Index cols = grid.steps + 1;
  const Index first = grid.steps / 2;
  const Index len = cols - first;
  if (len < 2) throw ConfigError("time grid too coarse for a decay fit");
  const Index P = noise.n_paths();
  Matrix sq(len, P);
  auto observer = [&](Index path, Index k, const std::vector<Vector>& xs) {
    if (k >= first) sq(k - first, path) = xs[0].squaredNorm();
  };
  const CoupledResult res =
      simulate_coupled({Dynamics(sys)}, {x0}, ControlSignal::zero(sys.m()), noise, observer, opts);

  DecayEstimate est;
  est.excluded = res.n_diverged;
  est.n_used = P - res.n_diverged;
  if (est.n_used == 0) throw DivergenceError("all paths diverged in the decay experiment");

  std::vector<Index> used;
  for (Index p = 0; p < P; ++p)
    if (!res.diverged[static_cast<std::size_t>(p)]) used.push_back(p);

  std::vector<double> times(static_cast<std::size_t>(len));
  for (Index j = 0; j < len; ++j) times[static_cast<std::size_t>(j)] = grid.t(first + j);

  auto rate_without = [&](Index group, Index groups) {
    Vector sum = Vector::Zero(len);
    Index count = 0;
    for (std::size_t i = 0; i < used.size(); ++i) {
      const Index g = static_cast<Index>(i) * groups / static_cast<Index>(used.size());
      if (g == group) continue;
      sum += sq.col(used[i]);
      ++count;
    }
    std::vector<double> logs(static_cast<std::size_t>(len));
    for (Index j = 0; j < len; ++j) logs[static_cast<std::size_t>(j)] = std::log(sum(j) / count);
    return ls_slope(times, logs);
  };

  {
    Vector sum = Vector::Zero(len);
    for (Index p : used) sum += sq.col(p);
    est.times = times;
    est.mean_square.resize(static_cast<std::size_t>(len));
    std::vector<double> logs(static_cast<std::size_t>(len));
    for (Index j = 0; j < len; ++j) {
      const double m = sum(j) / static_cast<double>(used.size());
      est.mean_square[static_cast<std::size_t>(j)] = m;
      logs[static_cast<std::size_t>(j)] = std::log(m);
    }
    est.rate = ls_slope(times, logs);
  }

  const Index G = std::min<Index>(jackknife_groups, static_cast<Index>(used.size()));
  if (G >= 2) {
    std::vector<double> theta(static_cast<std::size_t>(G));
    double mean = 0.0;
    for (Index g = 0; g < G; ++g) {
      theta[static_cast<std::size_t>(g)] = rate_without(g, G);
      mean += theta[static_cast<std::size_t>(g)];
    }
    mean /= static_cast<double>(G);
    double ss = 0.0;
    for (double v : theta) ss += (v - mean) * (v - mean);
    est.se = std::sqrt(ss * static_cast<double>(G - 1) / static_cast<double>(G));
  }
  return est;
}

IdentityCheckReport quadratic_form_identity_check(const StochasticSystem& sys, const Vector& x0,
                                                  const ControlSignal& u, const NoiseBundle& noise,
                                                  const IdentityCheckOptions& check, const SimulationOptions& opts) {
  if (x0.size() != sys.n()) throw ConfigError("x0 has the wrong dimension");
  const TimeGrid& grid = noise.grid();
  const Index cols = grid.steps + 1;
  const Index H = std::max<Index>(1, static_cast<Index>(std::llround(check.h / grid.dt)));
  if (2 * H >= grid.steps) throw ConfigError("central-difference step too large for the time grid");
  const Index P = noise.n_paths();
  const Dynamics dyn(sys);
  const Matrix& K = sys.K();

  // per path: ||x_k||^2, rhs_k = 2 x^T a + sum b_i^T b_j k_ij, ||a_k||^2
  Matrix sq(cols, P), rhs(cols, P), a2(cols, P);
  Matrix U(u.dim(), cols);
  for (Index k = 0; k < cols; ++k) U.col(k) = u(grid.t(k));
  auto observer = [&](Index path, Index k, const std::vector<Vector>& xs) {
    const Vector& x = xs[0];
    DynamicsWorkspace ws;
    Vector a;
    dyn.drift(x, U.col(k), a, ws);
    double quad = 0.0;
    std::vector<Vector> b;
    b.reserve(sys.N().size());
    for (const Matrix& Ni : sys.N()) b.push_back(Ni * x);
    for (Index i = 0; i < sys.d(); ++i)
      for (Index j = 0; j < sys.d(); ++j) quad += K(i, j) * b[i].dot(b[j]);
    sq(k, path) = x.squaredNorm();
    rhs(k, path) = 2.0 * x.dot(a) + quad;
    a2(k, path) = a.squaredNorm();
  };
  const CoupledResult res = simulate_coupled({dyn}, {x0}, u, noise, observer, opts);

  IdentityCheckReport report;
  std::vector<Index> used;
  for (Index p = 0; p < P; ++p)
    if (!res.diverged[static_cast<std::size_t>(p)]) used.push_back(p);
  report.n_used = static_cast<Index>(used.size());
  if (used.size() < 2) throw DivergenceError("too few non-diverged paths for the identity check");
  const double n = static_cast<double>(used.size());

  for (Index j = 0; j < check.check_points; ++j) {
    Index k = static_cast<Index>(std::llround(static_cast<double>(grid.steps) * (j + 1) / (check.check_points + 1)));
    k = std::clamp(k, H, grid.steps - H);
    double s_cd = 0.0, s_rhs = 0.0, s_e = 0.0, s_e2 = 0.0;
    for (Index p : used) {
      const double cd = (sq(k + H, p) - sq(k - H, p)) / (2.0 * H * grid.dt);
      double window = 0.0;
      for (Index i = k - H; i < k + H; ++i) window += rhs(i, p) + grid.dt * a2(i, p);
      window /= static_cast<double>(2 * H);
      const double e = cd - window;
      s_cd += cd;
      s_rhs += rhs(k, p);
      s_e += e;
      s_e2 += e * e;
    }
    IdentityCheckPoint pt;
    pt.t = grid.t(k);
    pt.lhs = s_cd / n;
    pt.rhs = s_rhs / n;
    const double mean_e = s_e / n;
    pt.bias = pt.lhs - pt.rhs - mean_e;
    const double var = std::max(0.0, (s_e2 - n * mean_e * mean_e) / (n - 1.0));
    const double scale = std::abs(pt.lhs) + std::abs(pt.rhs) + 1.0;
    pt.se = std::max(std::sqrt(var / n), 1e-12 * scale);
    pt.z = std::abs(mean_e) / pt.se;
    report.max_z = std::max(report.max_z, pt.z);
    report.points.push_back(pt);
  }
  report.passed = report.max_z <= check.z_max;
  return report;
}

}  // namespace stochbt
