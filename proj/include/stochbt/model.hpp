#pragma once

#include "stochbt/linalg.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace stochbt {

enum class NonlinearityKind { F1, F2, F3, Zero, Custom };

/// Drift nonlinearity f : R^n -> R^n with declared one-sided growth constants.
///
/// Built-ins:
///   F1(a): f(x) = (1+a) x∘x - x∘x∘x - a x   (componentwise)
///   F2:    f(x) = x - x∘x∘x
///   F3:    f(x) = x - x ||x||^2
///
/// `c_f` bounds <x, f(x)> <= c_f ||x||^2. `c_lip_minus` / `c_lip_plus` bound
/// <x -/+ z, f(x) -/+ f(z)> <= c ||x -/+ z||^2 when available.
class Nonlinearity {
 public:
  using Fn = std::function<Vector(const Vector&)>;
  using JacobianAtZero = std::function<Matrix(Index n)>;

  static Nonlinearity f1(double a);
  static Nonlinearity f2();
  static Nonlinearity f3();
  static Nonlinearity zero();
  /// Custom nonlinearities must declare their constants; nothing is inferred.
  static Nonlinearity custom(Fn fn, double c_f, std::optional<double> c_lip_minus = std::nullopt,
                             std::optional<double> c_lip_plus = std::nullopt,
                             JacobianAtZero jacobian = nullptr, std::string name = "custom");

  Vector operator()(const Vector& x) const;
  /// Writes f(x) into `out` (resized as needed).
  void evaluate(const Vector& x, Vector& out) const;

  NonlinearityKind kind() const { return kind_; }
  double a() const { return a_; }
  double c_f() const { return c_f_; }
  std::optional<double> c_lip_minus() const { return c_lip_minus_; }
  std::optional<double> c_lip_plus() const { return c_lip_plus_; }
  const std::string& name() const { return name_; }

  /// Jacobian at the origin; throws UnsupportedError for a custom
  /// nonlinearity registered without one.
  Matrix jacobian_at_zero(Index n) const;
  bool has_jacobian_at_zero() const { return kind_ != NonlinearityKind::Custom || static_cast<bool>(jacobian_); }

 private:
  Nonlinearity() = default;

  NonlinearityKind kind_ = NonlinearityKind::Zero;
  double a_ = 0.0;
  double c_f_ = 0.0;
  std::optional<double> c_lip_minus_;
  std::optional<double> c_lip_plus_;
  Fn fn_;
  JacobianAtZero jacobian_;
  std::string name_ = "zero";
};

/// dx = [A x + B u + f(x)] dt + sum_i N_i x dM_i,  y = C x,  E[M M^T] = K t.
///
/// Immutable after construction; the constructor validates dimensions and
/// that K is symmetric positive semidefinite.
class StochasticSystem {
 public:
  StochasticSystem(Matrix A, Matrix B, Matrix C, std::vector<Matrix> N, Matrix K, Nonlinearity f);

  Index n() const { return A_.rows(); }
  Index m() const { return B_.cols(); }
  Index p() const { return C_.rows(); }
  Index d() const { return static_cast<Index>(N_.size()); }

  const Matrix& A() const { return A_; }
  const Matrix& B() const { return B_; }
  const Matrix& C() const { return C_; }
  const std::vector<Matrix>& N() const { return N_; }
  const Matrix& K() const { return K_; }
  const Nonlinearity& f() const { return f_; }

  static constexpr double tol_psd = 1e-10;

 private:
  Matrix A_, B_, C_;
  std::vector<Matrix> N_;
  Matrix K_;
  Nonlinearity f_;
};

enum class ControlKind { Oscillating, Smooth, Zero, Custom };

/// Deterministic control u : [0, T] -> R^m.
class ControlSignal {
 public:
  using Fn = std::function<Vector(double)>;

  /// ũ(t) = (-3 cos 20t, 2 sin 10t)
  static ControlSignal oscillating();
  /// û(t) = (-3 e^{-t}, 2 sqrt t)
  static ControlSignal smooth();
  static ControlSignal zero(Index m);
  static ControlSignal custom(Index m, Fn fn, std::string id = "custom");

  Vector operator()(double t) const { return fn_(t); }
  ControlKind kind() const { return kind_; }
  Index dim() const { return m_; }
  const std::string& id() const { return id_; }

 private:
  ControlSignal(ControlKind kind, Index m, Fn fn, std::string id)
      : kind_(kind), m_(m), fn_(std::move(fn)), id_(std::move(id)) {}

  ControlKind kind_;
  Index m_;
  Fn fn_;
  std::string id_;
};

/// Spatial noise scaling profile g(ζ).
struct NoiseProfile {
  std::string name;
  std::function<double(double)> fn;

  static NoiseProfile four_sin();
  static NoiseProfile four_cos();
  static NoiseProfile constant(double value);
  /// g(ζ) = c0 + c1 ζ + c2 ζ^2 + ...
  static NoiseProfile polynomial(std::vector<double> coefficients);
  /// Resolves `4sin`, `4cos`; throws ConfigError otherwise.
  static NoiseProfile named(const std::string& name);
};

enum class Boundary { Dirichlet, Neumann };

/// Finite-difference reaction-diffusion system on (0, L) with n interior
/// nodes, boundary controls (m = 2) and averaged output (p = 1).
StochasticSystem build_reaction_diffusion(Index n, double L, const Nonlinearity& f,
                                          const std::vector<NoiseProfile>& profiles, const Matrix& K,
                                          Boundary boundary = Boundary::Dirichlet);

/// A x + B u + f(x).
Vector eval_drift(const StochasticSystem& sys, const Vector& x, const Vector& u);

/// Moves a nonzero f(0) into the input: f <- f - f(0), B <- [B | f(0)].
/// Returns `sys` unchanged when f(0) = 0. Controls for the returned system
/// must carry a trailing constant-one channel (see with_constant_channel).
StochasticSystem normalize_equilibrium(const StochasticSystem& sys);

/// u -> (u, 1).
ControlSignal with_constant_channel(const ControlSignal& u);

}  // namespace stochbt
