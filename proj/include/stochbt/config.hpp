#pragma once

#include "stochbt/balancing.hpp"
#include "stochbt/gramians.hpp"
#include "stochbt/model.hpp"
#include "stochbt/simulate.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace stochbt {

/// Experiment description read from an INI file. Every key is optional; the
/// defaults describe the n = 20 reaction-diffusion experiment with F2.
///
///   [model]       n, length, nonlinearity (F1|F2|F3|zero), a, boundary
///                 (dirichlet|neumann), profiles (comma list), K ("1,-0.5; -0.5,1"),
///                 control_input (on|off; off drops B for uncontrolled runs)
///   [gramians]    c1, c2 (default: the nonlinearity's shift), tol_lyap,
///                 max_iter, rel_gap, max_cond_K
///   [balancing]   r_list, tie_policy, hsv_floor, cond_max, split_tol
///   [simulation]  T, dt (default 1e-3 T), n_paths, seed, controls, gap_bound,
///                 blowup_threshold, sample_paths
///   [gap_scan]    weight (Q|P), matrix (optional literal, n <= 3), c2,
///                 per_axis, lo, hi, samples
///   [output]      directory
struct ExperimentConfig {
  struct Model {
    Index n = 20;
    double length = 1.0;
    std::string nonlinearity = "F2";
    double a = 0.1;
    Boundary boundary = Boundary::Dirichlet;
    std::vector<std::string> profiles{"4sin", "4cos"};
    Matrix K = (Matrix(2, 2) << 1.0, -0.5, -0.5, 1.0).finished();
    bool control_input = true;
  } model;

  struct Gramians {
    std::optional<double> c1;
    std::optional<double> c2;
    double tol_lyap = 1e-10;
    int max_iter = 500;
    double rel_gap = 1e-6;
    double max_cond_K = 1e12;
  } gramians;

  struct Balancing {
    std::vector<Index> r_list{3, 6, 10, 20};
    TiePolicy tie_policy = TiePolicy::KeepClusters;
    double hsv_floor = 1e-14;
    double cond_max = 1e12;
    double split_tol = 1e-6;
  } balancing;

  struct Simulation {
    double T = 1.0;
    std::optional<double> dt;
    Index n_paths = 1000;
    std::uint64_t seed = 20240601;
    std::vector<std::string> controls{"oscillating", "smooth"};
    bool gap_bound = false;
    double blowup_threshold = 1e8;
    /// Number of individual paths written by `simulate` (0: none).
    Index sample_paths = 0;
  } simulation;

  struct GapScan {
    std::string weight = "Q";
    std::optional<Matrix> matrix;
    std::optional<double> c2;
    Index per_axis = 400;
    double lo = -2.0;
    double hi = 2.0;
    Index samples = 1000000;
  } gap_scan;

  struct Output {
    std::string directory = "out";
  } output;

  static ExperimentConfig load(const std::string& path);
  static ExperimentConfig parse(const std::string& text);

  /// Throws ConfigError on the first invalid field.
  void validate() const;

  /// Resolved configuration in the same INI format (defaults filled in).
  std::string to_ini() const;

  Nonlinearity nonlinearity() const;
  StochasticSystem build_system() const;
  double c1() const;
  double c2() const;
  double dt() const;
  TimeGrid grid() const;
  NoiseBundle noise() const;
  std::vector<ControlSignal> controls() const;
  GramianOptions gramian_options() const;
  BalancingOptions balancing_options() const;
  SimulationOptions simulation_options() const;
};

/// Resolves oscillating | smooth | zero for an m-input system.
ControlSignal control_by_name(const std::string& name, Index m);

}  // namespace stochbt
