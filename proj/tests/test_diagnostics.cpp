#include "helpers.hpp"
#include "stochbt/diagnostics.hpp"
#include "stochbt/exceptions.hpp"

#include <doctest.h>

using namespace stochbt;

TEST_CASE("diagnostics: plus form on the diagonal is four times the monotonicity gap") {
  const Matrix X = testing::random_spd(3, 8);
  std::mt19937_64 gen(1);
  for (bool inv : {false, true}) {
    const GapForm form(Nonlinearity::f1(0.1), X, inv, 0.4);
    for (int s = 0; s < 200; ++s) {
      const Vector x = testing::random_vector(3, gen);
      CHECK(form.lipschitz(GapSign::Plus, x, x) == 4.0 * form.monotonicity(x));
      CHECK(form.lipschitz(GapSign::Minus, x, Vector::Zero(3)) == doctest::Approx(form.monotonicity(x)));
    }
  }
}

TEST_CASE("diagnostics: free functions match the form") {
  const Matrix X = testing::random_spd(2, 4);
  const GapForm form(Nonlinearity::f2(), X, true, 1.0);
  CHECK((form.M() - linalg::spd_inverse(X)).norm() < 1e-12);
  Vector x(2), z(2);
  x << 0.5, -1.0;
  z << 1.5, 0.25;
  CHECK(monotonicity_gap(Nonlinearity::f2(), X, true, x, 1.0) == doctest::Approx(form.monotonicity(x)));
  CHECK(lipschitz_gap(Nonlinearity::f2(), X, true, GapSign::Minus, x, z, 1.0) ==
        doctest::Approx(form.lipschitz(GapSign::Minus, x, z)));
}

TEST_CASE("diagnostics: identity weight with F2 is nonpositive exactly at c2 = 1") {
  // <x, x - x^3> - <x, x> = -sum x^4
  const GapForm form(Nonlinearity::f2(), Matrix::Identity(2, 2), false, 1.0);
  const GapReport grid = scan_monotonicity_grid(form, 41);
  CHECK(grid.values.size() == 41 * 41);
  CHECK(grid.nonpositive());
  CHECK(grid.min_value == doctest::Approx(-32.0));

  const GapForm loose(Nonlinearity::f2(), Matrix::Identity(2, 2), false, 0.0);
  const GapReport bad = scan_monotonicity_grid(loose, 41);
  CHECK(bad.n_positive > 0);
  CHECK(bad.max_positive > 0.0);
  CHECK(bad.positive_fraction == doctest::Approx(static_cast<double>(bad.n_positive) / (41.0 * 41.0)));
}

TEST_CASE("diagnostics: declared constants survive sampling") {
  ScanOptions so;
  so.seed = 3;
  for (const Nonlinearity& f : {Nonlinearity::f1(0.1), Nonlinearity::f2(), Nonlinearity::f3()}) {
    const GapForm mono(f, Matrix::Identity(4, 4), false, f.c_f());
    CHECK(scan_monotonicity_samples(mono, 20000, so).nonpositive());
    const GapForm lip(f, Matrix::Identity(4, 4), false, *f.c_lip_minus());
    CHECK(scan_lipschitz_samples(lip, GapSign::Minus, 20000, so).nonpositive());
  }
}

TEST_CASE("diagnostics: sampling is reproducible and worker independent") {
  const GapForm form(Nonlinearity::f2(), testing::random_spd(5, 2), false, 1.0);
  ScanOptions a, b;
  a.workers = 1;
  b.workers = 3;
  const GapReport ra = scan_monotonicity_samples(form, 10000, a);
  const GapReport rb = scan_monotonicity_samples(form, 10000, b);
  CHECK(ra.values == rb.values);
  CHECK(ra.n_positive == rb.n_positive);
}

TEST_CASE("diagnostics: Hessian check at the origin") {
  CHECK(hessian_local_max_check(Nonlinearity::f1(0.1), 0.30333, 5).passes);
  CHECK(hessian_local_max_check(Nonlinearity::zero(), 0.1, 5).passes);
  const HessianCheck f2 = hessian_local_max_check(Nonlinearity::f2(), 1.0, 5);
  CHECK(f2.scalar);
  CHECK(f2.c2_tilde == 0.0);
  CHECK_FALSE(f2.passes);
  CHECK(hessian_local_max_check(Nonlinearity::f2(), 1.5, 5).passes);
  const auto custom = Nonlinearity::custom([](const Vector& x) { return Vector(-x); }, 0.0);
  CHECK_THROWS_AS(hessian_local_max_check(custom, 1.0, 2), UnsupportedError);
}

TEST_CASE("diagnostics: average and energy checks on a small diffusion system") {
  const StochasticSystem sys = testing::diffusion(4, Nonlinearity::f2());
  const GramianComputation g = compute_gramians(sys, 1.0, 1.0);
  const NoiseBundle noise(sys.K(), TimeGrid::make(0.5, 1e-3), 200, 13);
  const Ensemble ens = simulate(sys, ControlSignal::oscillating(), noise, Vector::Zero(4), true);

  const AverageMonotonicityReport avg = average_monotonicity_check(sys, g.pair, ens);
  CHECK(avg.n_used == 200);
  CHECK(avg.P.lhs.size() == 501);
  const AverageMonotonicityReport streamed =
      average_monotonicity_check(sys, g.pair, ControlSignal::oscillating(), noise);
  CHECK(streamed.P.lhs == avg.P.lhs);
  CHECK(streamed.Q.rhs == avg.Q.rhs);
  CHECK(avg.ok());

  const EnergyEstimateReport en = energy_estimate_check(sys, g.pair, ens, ControlSignal::oscillating());
  CHECK(en.P.size() == 4);
  CHECK(en.P_ok);
  CHECK(en.Q_ok);

  const Ensemble no_states = simulate(sys, ControlSignal::oscillating(), noise, Vector::Zero(4));
  CHECK_THROWS_AS(average_monotonicity_check(sys, g.pair, no_states), ConfigError);
}

TEST_CASE("diagnostics: classification uses the documented rule") {
  const StochasticSystem sys = testing::diffusion(4, Nonlinearity::f2());
  const GramianComputation g = compute_gramians(sys, 1.0, 1.0);
  const NoiseBundle noise(sys.K(), TimeGrid::make(0.5, 1e-3), 100, 2);
  ClassificationOptions co;
  co.monotonicity_samples = 5000;
  co.lipschitz_samples = 5000;
  const ClassificationReport rep = classify_gramians(sys, g.pair, {ControlSignal::oscillating()}, noise, co);
  CHECK(rep.global_ok == (rep.mono_P.nonpositive() && rep.mono_Q.nonpositive()));
  if (rep.lipschitz_ok && (rep.global_ok || rep.average_ok))
    CHECK(rep.kind == GramianKind::OneSidedLipschitz);
  else if (rep.global_ok)
    CHECK(rep.kind == GramianKind::GlobalMonotonicity);
  else if (rep.average_ok)
    CHECK(rep.kind == GramianKind::AverageMonotonicity);
  else
    CHECK_FALSE(rep.kind.has_value());
  CHECK(rep.averages.size() == 1);
}
