#pragma once

#include "stochbt/balancing.hpp"
#include "stochbt/gramians.hpp"
#include "stochbt/simulate.hpp"

#include <algorithm>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace stochbt {

/// c = max{0, 2(c2 - c1)}
inline double error_weight(double c1, double c2) { return std::max(0.0, 2.0 * (c2 - c1)); }

/// 2 sum_{k>r} sigma_k * sqrt(int_0^T ||u||^2 e^{c(T-s)} ds)
double classical_bound(const Vector& sigma, Index r, const ControlSignal& u, double T, double c);

struct GapSummand {
  Index k = 0;
  double sigma = 0.0;
  /// E int G^-_Q(V_k x_k, V_{k-1} x_{k-1}) e^{c(T-s)} ds
  double q_gap = 0.0;
  /// E int G^+_{P^-1}(V_k x_k, V_{k-1} x_{k-1}) e^{c(T-s)} ds
  double p_gap = 0.0;
  /// int ||u||^2 e^{c(T-s)} ds
  double u_energy = 0.0;
  /// 2 q_gap + sigma^2 (2 p_gap + 4 u_energy), before clipping
  double radicand = 0.0;
  bool clipped = false;
  double value = 0.0;
};

/// Everything measured along the chain of orders r, r+1, ..., n on one
/// noise bundle (order n is the original system).
struct ChainResult {
  Index r = 0;
  std::string control_id;
  double c = 0.0;
  double gap_bound = 0.0;
  double gap_bound_se = 0.0;
  bool clipped = false;
  std::vector<GapSummand> summands;
  /// ||y - y_r||, ||y|| and the relative error, weighted norms
  NormEstimate error;
  NormEstimate y_norm;
  RatioEstimate rel_error;
  /// ||y_k - y_{k-1}|| for k = r+1..n
  std::vector<NormEstimate> links;
  double link_sum = 0.0;
  double link_sum_se = 0.0;
  Index n_used = 0;
};

/// Simulates the chain and evaluates the gap-augmented bound. Throws
/// DivergenceError naming the first order whose simulation left the
/// blow-up ball.
ChainResult gap_bound(const StochasticSystem& sys, const BalancedRealization& bal, const GramianPair& pair, Index r,
                      const ControlSignal& u, const NoiseBundle& noise, const SimulationOptions& sim = {});

struct ErrorRow {
  Index r_requested = 0;
  Index r = 0;
  std::string control_id;
  double rel_error = 0.0;
  double mc_se = 0.0;
  /// Bounds divided by the measured ||y||.
  double classical_bound = 0.0;
  double classical_bound_abs = 0.0;
  std::optional<double> gap_bound;
  std::optional<double> gap_bound_abs;
  bool gap_clipped = false;
  double ratio = 0.0;
  Index excluded_paths = 0;
  std::vector<std::string> warnings;
};

struct ErrorReport {
  std::string nonlinearity;
  double c = 0.0, c1 = 0.0, c2 = 0.0;
  std::uint64_t seed = 0;
  double T = 0.0, dt = 0.0;
  Index n_paths = 0;
  std::vector<ErrorRow> rows;

  /// r, control_id, rel_error, mc_se, classical_bound, gap_bound, ratio, excluded_paths
  void write_csv(std::ostream& os) const;
};

struct ErrorTableOptions {
  bool with_gap_bound = false;
  BalancingOptions balancing;
  SimulationOptions sim;
};

ErrorReport error_table(const StochasticSystem& sys, const BalancedRealization& bal, const GramianPair& pair,
                        const std::vector<Index>& r_list, const std::vector<ControlSignal>& controls,
                        const NoiseBundle& noise, const ErrorTableOptions& opts = {});

}  // namespace stochbt
