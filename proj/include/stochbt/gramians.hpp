#pragma once

#include "stochbt/linalg.hpp"
#include "stochbt/lyapunov.hpp"
#include "stochbt/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace stochbt {

enum class GramianKind { GlobalMonotonicity, AverageMonotonicity, OneSidedLipschitz };

std::string to_string(GramianKind kind);

/// Gramian candidates (P, Q) with their shifts and residual certificates.
///
/// `kind` stays empty until the diagnostics module classifies the pair; the
/// solvers never assert a class by construction.
struct GramianPair {
  Matrix P;
  Matrix Q;
  double c1 = 0.0;
  double c2 = 0.0;
  std::optional<GramianKind> kind;
  /// min eig of -(L_{c1}(P^{-1}) + P^{-1} B B^T P^{-1}); feasible when >= -tol_cert.
  double cert_P = 0.0;
  /// min eig of -(L_{c1}(Q) + C^T C).
  double cert_Q = 0.0;
  /// ||L_{c1}(Q) + C^T C||_F of the equality solve.
  double q_residual = 0.0;
};

inline constexpr double tol_cert = 1e-7;

/// Default shift c1 = c2 for a nonlinearity: c_f for F2/F3, the one-sided
/// Lipschitz constant (a^2 - a + 1)/3 for F1, zero for Zero, c_f for Custom.
double default_shift(const Nonlinearity& f);

/// Q with L_{c1}(Q) = -C^T C. Throws StabilityError when the shifted
/// operator is not stable.
LyapunovSolution compute_Q(const StochasticSystem& sys, double c1, const LyapunovSolveOptions& opts = {});

struct ScalingResult {
  Matrix P;
  double gamma = 1.0;
};

/// P = (gamma X)^{-1} with gamma the largest power of two such that
/// gamma Y >= gamma^2 X B B^T X, where Y = -L_{c1}(X) must be positive definite.
ScalingResult feasible_P_from_scaling(const StochasticSystem& sys, double c1, const Matrix& X);

/// Dense block LMI matrix
///   [[(A+c1 I)P + P(A+c1 I)^T + B B^T,  P [N_1^T ... N_d^T]],
///    [[N_1^T ... N_d^T]^T P,            -K^{-1} (x) P     ]].
Matrix block_lmi(const StochasticSystem& sys, double c1, const Matrix& P);

/// Left side of the transformed inequality
/// (A+c1 I)P + P(A+c1 I)^T + B B^T + sum_{i,j} P N_i^T P^{-1} N_j P k_ij.
Matrix transformed_inequality(const StochasticSystem& sys, double c1, const Matrix& P);

struct MinTraceOptions {
  double rel_gap = 1e-6;
  double barrier_factor = 5.0;
  int max_outer = 100;
  int max_newton_per_center = 60;
  double newton_tol = 1e-9;
  /// Stop once the duality measure falls below rel_gap * floor_scale * tr(P0)
  /// (reached only when the optimal trace is ~0, e.g. B = 0).
  double floor_scale = 1e-8;
  double max_cond_K = 1e12;
};

struct MinTraceResult {
  Matrix P;
  double trace = 0.0;
  double initial_trace = 0.0;
  double duality_measure = 0.0;
  int outer_iterations = 0;
  int newton_iterations = 0;
};

/// Log-barrier interior-point method for
///   minimize tr(P)  subject to the block LMI (strictly) and P > 0,
/// with Newton steps over the n(n+1)/2 entries of P. Holds a private
/// workspace; one instance must not be used from several threads at once.
class MinTraceSolver {
 public:
  explicit MinTraceSolver(MinTraceOptions opts = {}) : opts_(opts) {}
  MinTraceResult solve(const StochasticSystem& sys, double c1);
  const MinTraceOptions& options() const { return opts_; }

 private:
  MinTraceOptions opts_;
  Matrix G_, H_, W_;
};

MinTraceResult compute_P_min_trace(const StochasticSystem& sys, double c1, const MinTraceOptions& opts = {});

struct Certificates {
  double cert_P = 0.0;
  double cert_Q = 0.0;
};

Certificates verify_gramian_inequalities(const StochasticSystem& sys, const GramianPair& pair);

struct GramianOptions {
  LyapunovSolveOptions lyapunov;
  MinTraceOptions min_trace;
  SpectralOptions spectral;
};

struct GramianComputation {
  GramianPair pair;
  MinTraceResult p_stats;
  int q_iterations = 0;
  double abscissa = 0.0;
};

/// Q from the equality solve, P of minimal trace, plus certificates.
GramianComputation compute_gramians(const StochasticSystem& sys, double c1, double c2, const GramianOptions& opts = {});

}  // namespace stochbt
