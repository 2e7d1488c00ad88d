#include "helpers.hpp"
#include "stochbt/exceptions.hpp"
#include "stochbt/lyapunov.hpp"

#include <doctest.h>

using namespace stochbt;

TEST_CASE("lyapunov: apply matches the Kronecker matrix") {
  const StochasticSystem sys = testing::diffusion(5, Nonlinearity::f2());
  const LyapunovOperator op(sys, 0.7);
  const Matrix L = testing::kronecker_operator(sys, 0.7);
  const Matrix X = testing::random_spd(5, 2);
  const Matrix Y = op.apply(X);
  const Vector ref = L * Eigen::Map<const Vector>(X.data(), 25);
  CHECK((Eigen::Map<const Vector>(Y.data(), 25) - ref).norm() < 1e-10 * ref.norm());
}

TEST_CASE("lyapunov: standard solver residual") {
  const Matrix A = -testing::random_spd(6, 5);
  const Matrix R = testing::random_spd(6, 6);
  const StandardLyapunovSolver solver(A);
  const Matrix X = solver.solve(R);
  CHECK((A.transpose() * X + X * A + R).norm() < 1e-10 * R.norm());
  const Matrix Xs = solver.solve(R, 0.4);
  const Matrix As = A - 0.2 * Matrix::Identity(6, 6);
  CHECK((As.transpose() * Xs + Xs * As + R).norm() < 1e-10 * R.norm());
  CHECK(solver.abscissa() < 0.0);
}

TEST_CASE("lyapunov: equality solve agrees with a dense linear solve") {
  const StochasticSystem sys = testing::diffusion(6, Nonlinearity::f2());
  const LyapunovOperator op(sys, 1.0);
  const Matrix rhs = sys.C().transpose() * sys.C();
  const LyapunovSolution sol = solve_equality(op, rhs, {1e-12, 1000});
  const Matrix L = testing::kronecker_operator(sys, 1.0);
  const Vector ref = L.partialPivLu().solve(-Eigen::Map<const Vector>(rhs.data(), 36));
  CHECK((Eigen::Map<const Vector>(sol.X.data(), 36) - ref).norm() < 1e-9 * ref.norm());
  CHECK(sol.residual < 1e-9 * rhs.norm());
}

TEST_CASE("lyapunov: spectral abscissa") {
  // scalar: L(x) = (2(a + c1) + nu^2) x
  const StochasticSystem s = testing::scalar(-1.0, 1.0, 0.8);
  CHECK(spectral_abscissa(s, 0.0) == doctest::Approx(-2.0 + 0.64).epsilon(1e-9));
  CHECK(spectral_abscissa(s, 0.3) == doctest::Approx(-1.4 + 0.64).epsilon(1e-9));

  const StochasticSystem sys = testing::diffusion(5, Nonlinearity::f2());
  const Eigen::VectorXcd ev = testing::kronecker_operator(sys, 1.0).eigenvalues();
  double ref = -1e300;
  for (Index i = 0; i < ev.size(); ++i) ref = std::max(ref, ev(i).real());
  CHECK(spectral_abscissa(sys, 1.0) == doctest::Approx(ref).epsilon(1e-8));
}

TEST_CASE("lyapunov: unstable shift raises StabilityError") {
  const StochasticSystem s = testing::scalar(-1.0, 1.0, 1.5);
  const LyapunovOperator op(s, 0.0);
  CHECK_THROWS_AS(solve_equality(op, Matrix::Identity(1, 1)), StabilityError);
}
