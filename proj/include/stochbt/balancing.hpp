#pragma once

#include "stochbt/linalg.hpp"
#include "stochbt/model.hpp"

#include <string>
#include <vector>

namespace stochbt {

enum class TiePolicy {
  /// Raise r until sigma_r and sigma_{r+1} are no longer a near-equal pair.
  KeepClusters,
  /// Keep the requested r and only warn.
  Split,
};

TiePolicy parse_tie_policy(const std::string& name);
std::string to_string(TiePolicy policy);

struct BalancingOptions {
  double tol_bal = 1e-8;
  double cond_max = 1e12;
  /// HSVs below hsv_floor * sigma_1 are raised to that floor (with a warning).
  double hsv_floor = 1e-14;
  /// Eigenvalues of L_P^T Q L_P below -indefinite_tol * max eigenvalue make Q
  /// count as indefinite; smaller negative values are round-off and clipped.
  double indefinite_tol = 1e-8;
  /// sigma_r and sigma_{r+1} form a tie when (sigma_r - sigma_{r+1}) <= split_tol * sigma_r.
  double split_tol = 1e-6;
  TiePolicy tie_policy = TiePolicy::KeepClusters;
};

/// S = Sigma^{1/2} U^T L_P^{-1} with P = L_P L_P^T, L_P^T Q L_P = U Sigma^2 U^T,
/// and the coefficients of the balanced system (S A S^{-1}, S B, C S^{-1}, S N_i S^{-1}).
struct BalancedRealization {
  Matrix S;
  Matrix S_inv;
  Vector sigma;
  Matrix A, B, C;
  std::vector<Matrix> N;
  /// Number of HSVs raised to the floor.
  Index floored = 0;
  bool jittered = false;
  std::vector<std::string> warnings;
};

BalancedRealization balance(const StochasticSystem& sys, const Matrix& P, const Matrix& Q,
                            const BalancingOptions& opts = {});

/// sqrt of the eigenvalues of L_P^T Q L_P, descending, without forming S.
/// Values below the floor are returned as computed (clipped at 0).
Vector hankel_singular_values(const Matrix& P, const Matrix& Q, const BalancingOptions& opts = {});

/// Petrov-Galerkin projection x ~ V x_r, x_r = W^T x with W^T V = I.
class ReducedModel {
 public:
  ReducedModel(Index r_requested, Matrix V, Matrix W, const StochasticSystem& sys, std::vector<std::string> warnings);

  Index r() const { return V_.cols(); }
  Index r_requested() const { return r_requested_; }
  Index n_full() const { return V_.rows(); }
  const Matrix& V() const { return V_; }
  const Matrix& W() const { return W_; }
  const Matrix& A() const { return A_; }
  const Matrix& B() const { return B_; }
  const Matrix& C() const { return C_; }
  const std::vector<Matrix>& N() const { return N_; }
  const Matrix& K() const { return K_; }
  const Nonlinearity& f_full() const { return f_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// W^T f(V x_r)
  Vector f(const Vector& xr) const;
  /// A_r x_r + B_r u + f_r(x_r)
  Vector drift(const Vector& xr, const Vector& u) const;

  /// The reduced model as a system with a custom nonlinearity (no declared
  /// growth constants, reported as NaN).
  StochasticSystem as_system() const;

 private:
  Index r_requested_;
  Matrix V_, W_;
  Matrix A_, B_, C_;
  std::vector<Matrix> N_;
  Matrix K_;
  Nonlinearity f_;
  std::vector<std::string> warnings_;
};

/// Applies the tie policy to a requested order.
Index adjust_order(const Vector& sigma, Index r, const BalancingOptions& opts, std::vector<std::string>* warnings);

ReducedModel truncate(const StochasticSystem& sys, const BalancedRealization& bal, Index r,
                      const BalancingOptions& opts = {});

/// 2 * sum_{k>r} sigma_k for r = 0..n (entry r).
Vector tail_sums(const Vector& sigma);

}  // namespace stochbt
