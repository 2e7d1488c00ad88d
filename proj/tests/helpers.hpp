#pragma once

#include "stochbt/model.hpp"

#include <random>

namespace testing {

using stochbt::Index;
using stochbt::Matrix;
using stochbt::Vector;

inline Matrix two_by_two_K() { return (Matrix(2, 2) << 1.0, -0.5, -0.5, 1.0).finished(); }

inline stochbt::StochasticSystem diffusion(Index n, const stochbt::Nonlinearity& f,
                                          stochbt::Boundary b = stochbt::Boundary::Dirichlet) {
  return stochbt::build_reaction_diffusion(
      n, 1.0, f, {stochbt::NoiseProfile::four_sin(), stochbt::NoiseProfile::four_cos()}, two_by_two_K(), b);
}

/// dx = (a x + b u) dt + nu x dw
inline stochbt::StochasticSystem scalar(double a, double b, double nu,
                                       const stochbt::Nonlinearity& f = stochbt::Nonlinearity::zero()) {
  return stochbt::StochasticSystem(Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, b), Matrix::Constant(1, 1, 1.0),
                                   {Matrix::Constant(1, 1, nu)}, Matrix::Constant(1, 1, 1.0), f);
}

inline Matrix random_spd(Index n, unsigned seed, double shift = 0.5) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> g;
  Matrix G(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) G(i, j) = g(gen);
  return G * G.transpose() + shift * Matrix::Identity(n, n);
}

inline Vector random_vector(Index n, std::mt19937_64& gen, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = d(gen);
  return v;
}

/// vec(L(X)) = Lmat vec(X), column-major
inline Matrix kronecker_operator(const stochbt::StochasticSystem& sys, double c1) {
  const Index n = sys.n();
  const Matrix As = sys.A() + c1 * Matrix::Identity(n, n);
  Matrix L = Matrix::Zero(n * n, n * n);
  for (Index col = 0; col < n * n; ++col) {
    Matrix E = Matrix::Zero(n, n);
    E(col % n, col / n) = 1.0;
    Matrix LE = As.transpose() * E + E * As;
    for (Index i = 0; i < sys.d(); ++i)
      for (Index j = 0; j < sys.d(); ++j) LE += sys.K()(i, j) * sys.N()[i].transpose() * E * sys.N()[j];
    L.col(col) = Eigen::Map<const Vector>(LE.data(), n * n);
  }
  return L;
}

}  // namespace testing
