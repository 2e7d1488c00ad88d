#pragma once

#include "stochbt/gramians.hpp"
#include "stochbt/model.hpp"
#include "stochbt/simulate.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace stochbt {

enum class GapSign { Plus, Minus };

/// <x, M(f(x) - c2 x)> with M = X^{-1} (inverse_mode) or X.
double monotonicity_gap(const Nonlinearity& f, const Matrix& X, bool inverse_mode, const Vector& x, double c2);

/// <x +/- z, M(f(x) +/- f(z))> - c2 <x +/- z, M(x +/- z)>.
double lipschitz_gap(const Nonlinearity& f, const Matrix& X, bool inverse_mode, GapSign sign, const Vector& x,
                     const Vector& z, double c2);

/// Both gap functions for a fixed weight matrix; M is inverted once.
class GapForm {
 public:
  GapForm(Nonlinearity f, const Matrix& X, bool inverse_mode, double c2);

  Index n() const { return M_.rows(); }
  const Matrix& M() const { return M_; }
  double c2() const { return c2_; }
  bool inverse_mode() const { return inverse_mode_; }

  double monotonicity(const Vector& x) const;
  double lipschitz(GapSign sign, const Vector& x, const Vector& z) const;
  /// Same, for precomputed f(x), f(z).
  double lipschitz(GapSign sign, const Vector& x, const Vector& fx, const Vector& z, const Vector& fz) const;

  /// |<x, M f(x)>| + c2 |<x, M x>|: round-off scale of monotonicity(x).
  double monotonicity_scale(const Vector& x) const;

 private:
  Nonlinearity f_;
  Matrix M_;
  double c2_;
  bool inverse_mode_;
};

struct ScanOptions {
  double lo = -2.0;
  double hi = 2.0;
  /// A value counts as positive when it exceeds rel_tol times its round-off scale.
  double rel_tol = 1e-12;
  std::uint64_t seed = 1;
  bool keep_points = false;
  Index workers = 0;
};

struct GapReport {
  std::string description;
  Index n = 0;
  /// n x count sample points (grid scans always keep them).
  Matrix points;
  /// For pair scans: the second point of every pair.
  Matrix partners;
  Vector values;
  Index n_positive = 0;
  double positive_fraction = 0.0;
  /// Largest positive value, 0 if none.
  double max_positive = 0.0;
  double min_value = 0.0;
  bool nonpositive() const { return n_positive == 0; }
};

/// Tensor grid with `per_axis` points per coordinate over [lo, hi]^n (n <= 3).
GapReport scan_monotonicity_grid(const GapForm& form, Index per_axis, const ScanOptions& opts = {});
/// Uniform samples in [lo, hi]^n.
GapReport scan_monotonicity_samples(const GapForm& form, Index count, const ScanOptions& opts = {});
/// Independent uniform pairs (x, z) in [lo, hi]^n x [lo, hi]^n.
GapReport scan_lipschitz_samples(const GapForm& form, GapSign sign, Index count, const ScanOptions& opts = {});

struct HessianCheck {
  bool passes = false;
  double c2_tilde = 0.0;
  /// Jacobian at 0 is a multiple of the identity.
  bool scalar = false;
  double diagonal = 0.0;
};

/// Local-maximum criterion for the gap functions at the origin: passes iff
/// f'(0) = diag_value I and c2 - diag_value > 0 (strict).
HessianCheck hessian_local_max_check(const Nonlinearity& f, double c2, Index n);

struct AverageCheckSeries {
  /// E int_0^t <x, M f(x)> ds and c2 E int_0^t <x, M x> ds at every grid time
  std::vector<double> lhs;
  std::vector<double> rhs;
  /// Standard error of lhs - rhs.
  std::vector<double> se;
  /// rhs - lhs, minimum over t
  double min_margin = 0.0;
  /// min over t of (rhs - lhs) / se, +inf when se = 0 everywhere
  double min_z = 0.0;
  bool ok = false;
};

struct AverageMonotonicityReport {
  std::string control_id;
  AverageCheckSeries P;
  AverageCheckSeries Q;
  Index n_used = 0;
  bool ok() const { return P.ok && Q.ok; }
};

/// Needs an ensemble simulated from `sys` at x0 = 0 with stored states.
/// A time counts as violated when lhs - rhs exceeds z_tol standard errors.
AverageMonotonicityReport average_monotonicity_check(const StochasticSystem& sys, const GramianPair& pair,
                                                     const Ensemble& ens, double z_tol = 3.0);
/// Same, simulating from x0 = 0 without keeping the ensemble.
AverageMonotonicityReport average_monotonicity_check(const StochasticSystem& sys, const GramianPair& pair,
                                                     const ControlSignal& u, const NoiseBundle& noise,
                                                     double z_tol = 3.0, const SimulationOptions& sim = {});

struct EnergyDirection {
  double lambda = 0.0;
  /// sup_t E <x(t), p_k>^2 and its standard error at the maximizing time
  double sup_value = 0.0;
  double se = 0.0;
  double bound = 0.0;
  bool ok = false;
};

struct EnergyEstimateReport {
  std::string control_id;
  double c = 0.0;
  double control_norm_sq = 0.0;
  std::vector<EnergyDirection> P;
  /// E int_0^t ||y||^2 ds and 2 E int_0^t <Q x, B u> e^{c(t-s)} ds per grid time
  std::vector<double> q_lhs;
  std::vector<double> q_rhs;
  std::vector<double> q_se;
  bool P_ok = false;
  bool Q_ok = false;
};

EnergyEstimateReport energy_estimate_check(const StochasticSystem& sys, const GramianPair& pair,
                                           const Ensemble& ens, const ControlSignal& u, double z_tol = 3.0);
EnergyEstimateReport energy_estimate_check(const StochasticSystem& sys, const GramianPair& pair,
                                           const ControlSignal& u, const NoiseBundle& noise, double z_tol = 3.0,
                                           const SimulationOptions& sim = {});

struct ClassificationOptions {
  Index monotonicity_samples = 1'000'000;
  Index lipschitz_samples = 1'000'000;
  ScanOptions scan;
  double z_tol = 3.0;
  SimulationOptions sim;
};

struct ClassificationReport {
  std::optional<GramianKind> kind;
  GapReport mono_P, mono_Q;
  GapReport lip_P_plus, lip_Q_minus;
  std::vector<AverageMonotonicityReport> averages;
  bool global_ok = false;
  bool average_ok = false;
  bool lipschitz_ok = false;
};

/// Sampling-based classification of a pair; `controls` is the control
/// family for the average checks (simulated on `noise` from x0 = 0).
ClassificationReport classify_gramians(const StochasticSystem& sys, const GramianPair& pair,
                                       const std::vector<ControlSignal>& controls, const NoiseBundle& noise,
                                       const ClassificationOptions& opts = {});

}  // namespace stochbt
