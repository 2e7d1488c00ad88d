#include "helpers.hpp"
#include "stochbt/exceptions.hpp"
#include "stochbt/linalg.hpp"
#include "stochbt/model.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace stochbt;

TEST_CASE("linalg: sqrt_psd and spd_inverse") {
  const Matrix X = testing::random_spd(5, 3);
  const Matrix R = linalg::sqrt_psd(X, 1e-12);
  CHECK(linalg::relative_frobenius(R * R, X) < 1e-12);
  CHECK(linalg::relative_frobenius(linalg::spd_inverse(X) * X, Matrix::Identity(5, 5)) < 1e-12);

  Matrix bad = Matrix::Identity(2, 2);
  bad(1, 1) = -1.0;
  CHECK_THROWS_AS(linalg::sqrt_psd(bad, 1e-12), ConfigError);
  CHECK_THROWS_AS(linalg::spd_inverse(bad), ConditioningError);
}

TEST_CASE("linalg: cond_sym is infinite for singular matrices") {
  const Matrix S = (Matrix(2, 2) << 1.0, 1.0, 1.0, 1.0).finished();
  CHECK(std::isinf(linalg::cond_sym(S)));
  CHECK(linalg::cond_sym(Matrix::Identity(3, 3) * 4.0) == doctest::Approx(1.0));
}

TEST_CASE("model: built-in nonlinearities evaluate componentwise") {
  Vector x(3);
  x << -1.5, 0.2, 2.0;
  const Vector f2 = Nonlinearity::f2()(x);
  for (Index i = 0; i < 3; ++i) CHECK(f2(i) == doctest::Approx(x(i) - x(i) * x(i) * x(i)));

  const double a = 0.1;
  const Vector f1 = Nonlinearity::f1(a)(x);
  for (Index i = 0; i < 3; ++i)
    CHECK(f1(i) == doctest::Approx((1 + a) * x(i) * x(i) - x(i) * x(i) * x(i) - a * x(i)));

  const Vector f3 = Nonlinearity::f3()(x);
  CHECK((f3 - (x - x * x.squaredNorm())).norm() < 1e-14);
  CHECK(Nonlinearity::zero()(x).norm() == 0.0);
}

TEST_CASE("model: declared constants hold on random samples") {
  std::mt19937_64 gen(11);
  for (const Nonlinearity& f : {Nonlinearity::f1(0.1), Nonlinearity::f2(), Nonlinearity::f3()}) {
    for (int s = 0; s < 2000; ++s) {
      const Vector x = testing::random_vector(4, gen, -3.0, 3.0);
      const Vector z = testing::random_vector(4, gen, -3.0, 3.0);
      CHECK(x.dot(f(x)) <= f.c_f() * x.squaredNorm() + 1e-10);
      REQUIRE(f.c_lip_minus());
      CHECK((x - z).dot(f(x) - f(z)) <= *f.c_lip_minus() * (x - z).squaredNorm() + 1e-10);
    }
  }
  CHECK(Nonlinearity::f1(0.1).c_f() == doctest::Approx(0.2025));
  CHECK(*Nonlinearity::f1(0.1).c_lip_minus() == doctest::Approx(0.91 / 3.0));
  CHECK_FALSE(Nonlinearity::f1(0.1).c_lip_plus().has_value());
}

TEST_CASE("model: custom nonlinearity without Jacobian is unsupported for the Jacobian") {
  auto f = Nonlinearity::custom([](const Vector& x) { return Vector(-x); }, 0.0);
  CHECK_FALSE(f.has_jacobian_at_zero());
  CHECK_THROWS_AS(f.jacobian_at_zero(2), UnsupportedError);
  CHECK(Nonlinearity::f2().jacobian_at_zero(3).isApprox(Matrix::Identity(3, 3)));
}

TEST_CASE("model: reaction-diffusion dimensions and symmetry") {
  const StochasticSystem sys = testing::diffusion(8, Nonlinearity::f2());
  CHECK(sys.n() == 8);
  CHECK(sys.m() == 2);
  CHECK(sys.p() == 1);
  CHECK(sys.d() == 2);
  CHECK((sys.A() - sys.A().transpose()).norm() < 1e-12);
  CHECK(linalg::max_eig_sym(sys.A()) < 0.0);
  CHECK(sys.C().sum() == doctest::Approx(1.0));

  const StochasticSystem neu = testing::diffusion(8, Nonlinearity::f2(), Boundary::Neumann);
  CHECK(neu.n() == 8);
  CHECK_THROWS_AS(testing::diffusion(1, Nonlinearity::f2()), ConfigError);
}

TEST_CASE("model: validation rejects bad K") {
  const Matrix A = -Matrix::Identity(2, 2);
  const Matrix B = Matrix::Ones(2, 1), C = Matrix::Ones(1, 2);
  std::vector<Matrix> N{Matrix::Identity(2, 2)};
  CHECK_THROWS_AS(StochasticSystem(A, B, C, N, Matrix::Constant(1, 1, -1.0), Nonlinearity::zero()), ConfigError);
  CHECK_THROWS_AS(StochasticSystem(A, B, C, N, Matrix::Identity(2, 2), Nonlinearity::zero()), ConfigError);
  CHECK_NOTHROW(StochasticSystem(A, B, C, N, Matrix::Constant(1, 1, 0.0), Nonlinearity::zero()));
}

TEST_CASE("model: controls") {
  const ControlSignal u = ControlSignal::oscillating();
  CHECK(u(0.3)(0) == doctest::Approx(-3.0 * std::cos(6.0)));
  CHECK(u(0.3)(1) == doctest::Approx(2.0 * std::sin(3.0)));
  const ControlSignal v = ControlSignal::smooth();
  CHECK(v(0.25)(0) == doctest::Approx(-3.0 * std::exp(-0.25)));
  CHECK(v(0.25)(1) == doctest::Approx(1.0));
  CHECK(ControlSignal::zero(3)(1.0).norm() == 0.0);
}

TEST_CASE("model: equilibrium normalization moves f(0) into B") {
  const auto shifted = Nonlinearity::custom([](const Vector& x) { return Vector(Vector::Ones(x.size()) - x); }, 0.0);
  const StochasticSystem sys(-Matrix::Identity(2, 2), Matrix::Ones(2, 1), Matrix::Ones(1, 2),
                             {Matrix::Identity(2, 2)}, Matrix::Identity(1, 1), shifted);
  const StochasticSystem norm = normalize_equilibrium(sys);
  CHECK(norm.m() == 2);
  const Vector x = Vector::Constant(2, 0.7);
  const ControlSignal u = with_constant_channel(ControlSignal::custom(1, [](double) { return Vector::Ones(1); }));
  CHECK((eval_drift(norm, x, u(0.0)) - eval_drift(sys, x, Vector::Ones(1))).norm() < 1e-14);
}
