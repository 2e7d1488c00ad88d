#include "stochbt/model.hpp"

#include "stochbt/exceptions.hpp"

#include <cmath>
#include <sstream>

namespace stochbt {

Nonlinearity Nonlinearity::f1(double a) {
  Nonlinearity f;
  f.kind_ = NonlinearityKind::F1;
  f.a_ = a;
  f.c_f_ = (a - 1.0) * (a - 1.0) / 4.0;
  f.c_lip_minus_ = (a * a - a + 1.0) / 3.0;
  // the plus form fails for F1, no constant exists
  std::ostringstream os;
  os << "F1(a=" << a << ")";
  f.name_ = os.str();
  return f;
}

Nonlinearity Nonlinearity::f2() {
  Nonlinearity f;
  f.kind_ = NonlinearityKind::F2;
  f.c_f_ = 1.0;
  f.c_lip_minus_ = 1.0;
  f.c_lip_plus_ = 1.0;
  f.name_ = "F2";
  return f;
}

Nonlinearity Nonlinearity::f3() {
  Nonlinearity f;
  f.kind_ = NonlinearityKind::F3;
  f.c_f_ = 1.0;
  f.c_lip_minus_ = 1.0;
  f.c_lip_plus_ = 1.0;
  f.name_ = "F3";
  return f;
}

Nonlinearity Nonlinearity::zero() {
  Nonlinearity f;
  f.kind_ = NonlinearityKind::Zero;
  f.c_f_ = 0.0;
  f.c_lip_minus_ = 0.0;
  f.c_lip_plus_ = 0.0;
  f.name_ = "zero";
  return f;
}

Nonlinearity Nonlinearity::custom(Fn fn, double c_f, std::optional<double> c_lip_minus,
                                  std::optional<double> c_lip_plus, JacobianAtZero jacobian,
                                  std::string name) {
  if (!fn) throw ConfigError("custom nonlinearity requires a callable");
  Nonlinearity f;
  f.kind_ = NonlinearityKind::Custom;
  f.fn_ = std::move(fn);
  f.c_f_ = c_f;
  f.c_lip_minus_ = c_lip_minus;
  f.c_lip_plus_ = c_lip_plus;
  f.jacobian_ = std::move(jacobian);
  f.name_ = std::move(name);
  return f;
}

void Nonlinearity::evaluate(const Vector& x, Vector& out) const {
  switch (kind_) {
    case NonlinearityKind::F1:
      out = ((1.0 + a_) * x.array().square() - x.array().cube() - a_ * x.array()).matrix();
      return;
    case NonlinearityKind::F2:
      out = (x.array() - x.array().cube()).matrix();
      return;
    case NonlinearityKind::F3:
      out = x * (1.0 - x.squaredNorm());
      return;
    case NonlinearityKind::Zero:
      out.setZero(x.size());
      return;
    case NonlinearityKind::Custom:
      out = fn_(x);
      if (out.size() != x.size()) throw ConfigError("custom nonlinearity returned a vector of the wrong size");
      return;
  }
}

Vector Nonlinearity::operator()(const Vector& x) const {
  Vector out;
  evaluate(x, out);
  return out;
}

Matrix Nonlinearity::jacobian_at_zero(Index n) const {
  switch (kind_) {
    case NonlinearityKind::F1:
      return -a_ * Matrix::Identity(n, n);
    case NonlinearityKind::F2:
    case NonlinearityKind::F3:
      return Matrix::Identity(n, n);
    case NonlinearityKind::Zero:
      return Matrix::Zero(n, n);
    case NonlinearityKind::Custom:
      if (!jacobian_) throw UnsupportedError("custom nonlinearity '" + name_ + "' has no Jacobian at zero");
      return jacobian_(n);
  }
  return {};
}

StochasticSystem::StochasticSystem(Matrix A, Matrix B, Matrix C, std::vector<Matrix> N, Matrix K, Nonlinearity f)
    : A_(std::move(A)), B_(std::move(B)), C_(std::move(C)), N_(std::move(N)), K_(std::move(K)), f_(std::move(f)) {
  const Index n = A_.rows();
  if (n < 1 || A_.cols() != n) throw ConfigError("A must be a non-empty square matrix");
  if (B_.rows() != n || B_.cols() < 1) throw ConfigError("B must have n rows and at least one column");
  if (C_.cols() != n || C_.rows() < 1) throw ConfigError("C must have n columns and at least one row");
  if (N_.empty()) throw ConfigError("at least one noise matrix N_i is required");
  for (const auto& Ni : N_)
    if (Ni.rows() != n || Ni.cols() != n) throw ConfigError("every N_i must be n x n");
  const Index d = static_cast<Index>(N_.size());
  if (K_.rows() != d || K_.cols() != d) throw ConfigError("K must be d x d with d = number of N_i");
  const double scale = std::max(1.0, K_.norm());
  if ((K_ - K_.transpose()).norm() > 1e-12 * scale) throw ConfigError("K must be symmetric");
  if (linalg::min_eig_sym(K_) < -tol_psd * scale) throw ConfigError("K must be positive semidefinite");
  K_ = linalg::sym(K_);
}

ControlSignal ControlSignal::oscillating() {
  return ControlSignal(ControlKind::Oscillating, 2,
                       [](double t) {
                         Vector u(2);
                         u << -3.0 * std::cos(20.0 * t), 2.0 * std::sin(10.0 * t);
                         return u;
                       },
                       "oscillating");
}

ControlSignal ControlSignal::smooth() {
  return ControlSignal(ControlKind::Smooth, 2,
                       [](double t) {
                         Vector u(2);
                         u << -3.0 * std::exp(-t), 2.0 * std::sqrt(std::max(t, 0.0));
                         return u;
                       },
                       "smooth");
}

ControlSignal ControlSignal::zero(Index m) {
  return ControlSignal(ControlKind::Zero, m, [m](double) { return Vector::Zero(m).eval(); }, "zero");
}

ControlSignal ControlSignal::custom(Index m, Fn fn, std::string id) {
  if (!fn) throw ConfigError("custom control requires a callable");
  return ControlSignal(ControlKind::Custom, m, std::move(fn), std::move(id));
}

NoiseProfile NoiseProfile::four_sin() { return {"4sin", [](double z) { return 4.0 * std::sin(z); }}; }
NoiseProfile NoiseProfile::four_cos() { return {"4cos", [](double z) { return 4.0 * std::cos(z); }}; }

NoiseProfile NoiseProfile::constant(double value) {
  std::ostringstream os;
  os << "const(" << value << ")";
  return {os.str(), [value](double) { return value; }};
}

NoiseProfile NoiseProfile::polynomial(std::vector<double> coefficients) {
  std::ostringstream os;
  os << "poly(";
  for (std::size_t i = 0; i < coefficients.size(); ++i) os << (i ? "," : "") << coefficients[i];
  os << ")";
  return {os.str(), [c = std::move(coefficients)](double z) {
            double acc = 0.0;
            for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * z + *it;
            return acc;
          }};
}

NoiseProfile NoiseProfile::named(const std::string& name) {
  if (name == "4sin") return four_sin();
  if (name == "4cos") return four_cos();
  throw ConfigError("unknown noise profile '" + name + "' (expected 4sin, 4cos or a coefficient list)");
}

StochasticSystem build_reaction_diffusion(Index n, double L, const Nonlinearity& f,
                                          const std::vector<NoiseProfile>& profiles, const Matrix& K,
                                          Boundary boundary) {
  if (n < 2) throw ConfigError("reaction-diffusion model needs n >= 2");
  if (!(L > 0.0)) throw ConfigError("domain length L must be positive");
  const Index d = static_cast<Index>(profiles.size());
  if (d == 0 || K.rows() != d || K.cols() != d)
    throw ConfigError("number of noise profiles must match the dimension of K");

  const double h = L / static_cast<double>(n + 1);
  const double ih2 = 1.0 / (h * h);

  Matrix A = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    A(j, j) = -2.0 * ih2;
    if (j > 0) A(j, j - 1) = ih2;
    if (j + 1 < n) A(j, j + 1) = ih2;
  }
  Matrix B = Matrix::Zero(n, 2);
  B(0, 0) = ih2;
  if (boundary == Boundary::Dirichlet) {
    B(n - 1, 1) = ih2;
  } else {
    A(n - 1, n - 1) = -ih2;
    B(n - 1, 1) = 1.0 / h;
  }
  Matrix C = Matrix::Constant(1, n, 1.0 / static_cast<double>(n));

  std::vector<Matrix> N;
  N.reserve(profiles.size());
  for (const auto& g : profiles) {
    Vector diag(n);
    for (Index j = 0; j < n; ++j) diag(j) = g.fn(static_cast<double>(j + 1) * h);
    N.emplace_back(diag.asDiagonal());
  }
  return StochasticSystem(std::move(A), std::move(B), std::move(C), std::move(N), K, f);
}

Vector eval_drift(const StochasticSystem& sys, const Vector& x, const Vector& u) {
  if (x.size() != sys.n()) throw ConfigError("state dimension mismatch in eval_drift");
  if (u.size() != sys.m()) throw ConfigError("input dimension mismatch in eval_drift");
  return sys.A() * x + sys.B() * u + sys.f()(x);
}

StochasticSystem normalize_equilibrium(const StochasticSystem& sys) {
  const Vector f0 = sys.f()(Vector::Zero(sys.n()));
  if (f0.isZero(0.0)) return sys;

  const Nonlinearity& f = sys.f();
  auto shifted = Nonlinearity::custom([f, f0](const Vector& x) { return (f(x) - f0).eval(); }, f.c_f(),
                                      f.c_lip_minus(), std::nullopt,
                                      f.has_jacobian_at_zero()
                                          ? Nonlinearity::JacobianAtZero([f](Index n) { return f.jacobian_at_zero(n); })
                                          : Nonlinearity::JacobianAtZero{},
                                      f.name() + "-f(0)");
  Matrix B(sys.n(), sys.m() + 1);
  B << sys.B(), f0;
  return StochasticSystem(sys.A(), std::move(B), sys.C(), sys.N(), sys.K(), std::move(shifted));
}

ControlSignal with_constant_channel(const ControlSignal& u) {
  const Index m = u.dim();
  return ControlSignal::custom(
      m + 1,
      [u, m](double t) {
        Vector v(m + 1);
        v << u(t), 1.0;
        return v;
      },
      u.id() + "+1");
}

}  // namespace stochbt
