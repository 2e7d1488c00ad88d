#pragma once

#include "stochbt/balancing.hpp"
#include "stochbt/linalg.hpp"
#include "stochbt/model.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace stochbt {

/// Uniform grid t_k = k dt, k = 0..steps, with steps * dt = T.
struct TimeGrid {
  double T = 1.0;
  double dt = 1e-3;
  Index steps = 1000;

  /// Throws ConfigError unless dt divides T to round-off.
  static TimeGrid make(double T, double dt);
  double t(Index k) const { return static_cast<double>(k) * dt; }
};

/// Correlated Wiener increments dM ~ N(0, K dt), generated lazily per path.
///
/// Path p draws from its own mt19937_64 stream seeded from (seed, p), so the
/// increments of a path do not depend on how paths are scheduled.
class NoiseBundle {
 public:
  NoiseBundle(const Matrix& K, TimeGrid grid, Index n_paths, std::uint64_t seed);

  const TimeGrid& grid() const { return grid_; }
  Index n_paths() const { return n_paths_; }
  Index d() const { return sqrtK_.rows(); }
  std::uint64_t seed() const { return seed_; }
  const Matrix& sqrtK() const { return sqrtK_; }

  /// d x steps matrix; column k is the increment over [t_k, t_{k+1}].
  void increments(Index path, Matrix& out) const;
  Matrix increments(Index path) const;

 private:
  Matrix sqrtK_;
  TimeGrid grid_;
  Index n_paths_;
  std::uint64_t seed_;
};

/// Seed of the per-path generator.
std::uint64_t path_seed(std::uint64_t seed, Index path);

/// Scratch buffers for Dynamics; one per worker thread.
struct DynamicsWorkspace {
  Vector full_x, full_f, tmp;
};

/// Coefficient view used by the Euler-Maruyama stepper; built from a full
/// system or a reduced model. Cheap to copy, immutable.
class Dynamics {
 public:
  explicit Dynamics(const StochasticSystem& sys);
  explicit Dynamics(const ReducedModel& red);

  Index dim() const;
  Index m() const;
  Index p() const;
  Index d() const;
  const Matrix& A() const;
  const Matrix& C() const;
  const std::vector<Matrix>& N() const;

  /// out = A x + B u + f(x)
  void drift(const Vector& x, const Eigen::Ref<const Vector>& u, Vector& out, DynamicsWorkspace& ws) const;
  /// f(x) alone (full coordinates for a full system, W^T f(V x) for a reduced one)
  void nonlinearity(const Vector& x, Vector& out, DynamicsWorkspace& ws) const;
  /// out += sum_i N_i x dM_i
  void add_noise(const Vector& x, const Eigen::Ref<const Vector>& dM, Vector& out) const;
  /// Lift to full coordinates (V x for a reduced model, identity otherwise).
  void lift(const Vector& x, Vector& out) const;

 private:
  struct Data;
  std::shared_ptr<const Data> data_;
};

struct SimulationOptions {
  double blowup_threshold = 1e8;
  /// 0: STOCHBT_WORKERS or the hardware concurrency.
  Index workers = 0;
};

/// Worker count: explicit value, else STOCHBT_WORKERS, else hardware threads.
Index resolve_workers(Index requested);

/// Runs fn(i) for i in [0, count) on `workers` threads; paths are dealt
/// round-robin, the first exception is rethrown.
void parallel_for(Index count, Index workers, const std::function<void(Index)>& fn);

/// Called at every grid time (k = 0..steps) of every path with the current
/// states of all coupled systems. Invoked concurrently for distinct paths.
using PathObserver = std::function<void(Index path, Index k, const std::vector<Vector>& states)>;

struct CoupledResult {
  /// 1 if any of the coupled systems left the blow-up ball on that path.
  std::vector<char> diverged;
  Index n_diverged = 0;
  /// Paths on which system s was the first (or tied first) to blow up.
  std::vector<Index> per_system;
};

/// Euler-Maruyama for several systems driven by the same increments and
/// the same control. Diverged paths stop early; the observer has then only
/// seen a prefix and the caller must drop the path. Only paths in
/// [begin, end) are run (end < 0: all); the result is still indexed by path.
CoupledResult simulate_coupled(const std::vector<Dynamics>& systems, const std::vector<Vector>& x0,
                               const ControlSignal& u, const NoiseBundle& noise, const PathObserver& observer,
                               const SimulationOptions& opts = {}, Index begin = 0, Index end = -1);

/// Receives the full dim x (steps+1) trajectory of one path.
using PathVisitor = std::function<void(Index path, const Matrix& states, bool diverged)>;

/// Simulates `batch` paths at a time and hands their trajectories to
/// `visit` in path order, so memory stays bounded and reductions done in
/// the visitor are independent of the worker count.
void stream_states(const Dynamics& dyn, const ControlSignal& u, const NoiseBundle& noise, const Vector& x0,
                   const PathVisitor& visit, Index batch = 64, const SimulationOptions& opts = {});

struct Ensemble {
  TimeGrid grid;
  Index n_paths = 0;
  Index dim = 0;
  std::string control_id;
  std::uint64_t seed = 0;
  /// p x (steps+1) per path
  std::vector<Matrix> outputs;
  /// dim x (steps+1) per path, only when requested
  std::vector<Matrix> states;
  std::vector<char> diverged;

  Index excluded() const;
  Index used() const { return n_paths - excluded(); }
};

Ensemble simulate(const Dynamics& dyn, const ControlSignal& u, const NoiseBundle& noise, const Vector& x0,
                  bool store_states = false, const SimulationOptions& opts = {});
Ensemble simulate(const StochasticSystem& sys, const ControlSignal& u, const NoiseBundle& noise, const Vector& x0,
                  bool store_states = false, const SimulationOptions& opts = {});
Ensemble simulate(const ReducedModel& red, const ControlSignal& u, const NoiseBundle& noise, const Vector& x0,
                  bool store_states = false, const SimulationOptions& opts = {});

/// Per-time mean and standard deviation of each output channel over the
/// non-diverged paths: rows are times, columns (mean_1, std_1, mean_2, ...).
Matrix output_statistics(const Ensemble& ens);

/// Trapezoid rule for int_0^T ||y(s)||^2 e^{c(T-s)} ds on the grid.
double weighted_energy(const Matrix& Y, const TimeGrid& grid, double c);

struct NormEstimate {
  double value = 0.0;
  /// Standard error of `value` (delta method through the square root).
  double se = 0.0;
  Index n_used = 0;
  Index excluded = 0;
};

/// sqrt(mean of per-path values) with its standard error; `skip` marks
/// paths to drop (may be empty).
NormEstimate sqrt_mean(const std::vector<double>& per_path, const std::vector<char>& skip);

/// sqrt(E int ||y||^2 e^{c(T-s)} ds)
NormEstimate weighted_l2T_norm(const Ensemble& ens, double c);
/// Same for y_a - y_b on a shared noise bundle; a path is dropped if either diverged.
NormEstimate weighted_l2T_distance(const Ensemble& a, const Ensemble& b, double c);

struct RatioEstimate {
  double value = 0.0;
  /// Relative standard error of `value`.
  double rel_se = 0.0;
  Index n_used = 0;
};

/// sqrt(mean num) / sqrt(mean den) from paired per-path values; the
/// relative standard error comes from the per-path influence function.
RatioEstimate sqrt_ratio(const std::vector<double>& num, const std::vector<double>& den,
                         const std::vector<char>& skip);

/// ||y_a - y_b|| / ||y_a|| with the weighted norm.
RatioEstimate relative_error(const Ensemble& full, const Ensemble& reduced, double c);

/// int_0^T ||u(s)||^2 e^{c(T-s)} ds by adaptive Gauss-Kronrod quadrature.
double control_energy(const ControlSignal& u, double T, double c);

struct DecayCeiling {
  double beta = 0.0;
  double ceiling = 0.0;
};

/// 2(c2 - c1) - beta with beta = min eig(Y) / max eig(X) for X solving
/// L_{c1}(X) = -I (so Y = I).
DecayCeiling decay_ceiling(const StochasticSystem& sys, double c1, double c2);

struct DecayEstimate {
  double rate = 0.0;
  double se = 0.0;
  Index n_used = 0;
  Index excluded = 0;
  std::vector<double> times;
  std::vector<double> mean_square;
};

/// Least-squares slope of log E||x(t)||^2 over the second half of [0, T]
/// for the uncontrolled system started at x0; standard error by a
/// delete-one-group jackknife over path batches.
DecayEstimate estimate_ms_decay(const StochasticSystem& sys, const Vector& x0, const NoiseBundle& noise,
                                const SimulationOptions& opts = {}, Index jackknife_groups = 20);

struct IdentityCheckOptions {
  Index check_points = 5;
  /// Half width of the central difference. Keep h * (fastest control
  /// frequency) well below 1; the oscillating control has frequency 20.
  double h = 0.01;
  double z_max = 3.0;
};

struct IdentityCheckPoint {
  double t = 0.0;
  /// central difference of E||x||^2
  double lhs = 0.0;
  /// 2 E[x^T a] + sum E[b_i^T b_j] k_ij at t
  double rhs = 0.0;
  /// O(h^2) + O(dt) bias of the discrete central difference, from ensemble means
  double bias = 0.0;
  double se = 0.0;
  /// |lhs - rhs - bias| / se
  double z = 0.0;
};

struct IdentityCheckReport {
  std::vector<IdentityCheckPoint> points;
  double max_z = 0.0;
  Index n_used = 0;
  bool passed = false;
};

/// Monte Carlo check of d/dt E[x^T x] = 2 E[x^T a] + sum_{ij} E[b_i^T b_j] k_ij
/// with a = A x + B u + f(x), b_i = N_i x, at interior grid times.
IdentityCheckReport quadratic_form_identity_check(const StochasticSystem& sys, const Vector& x0,
                                                  const ControlSignal& u, const NoiseBundle& noise,
                                                  const IdentityCheckOptions& check = {},
                                                  const SimulationOptions& opts = {});

}  // namespace stochbt
