#include "stochbt/balancing.hpp"
#include "stochbt/config.hpp"
#include "stochbt/diagnostics.hpp"
#include "stochbt/error_bounds.hpp"
#include "stochbt/gramians.hpp"
#include "stochbt/pipeline.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace stochbt;

namespace {

Nonlinearity nonlinearity_by_name(const std::string& name, double a) {
  ExperimentConfig cfg;
  cfg.model.nonlinearity = name;
  cfg.model.a = a;
  return cfg.nonlinearity();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core of stochbt";

  auto error = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", error.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", error.ptr());

  py::class_<StochasticSystem>(m, "System")
      .def_property_readonly("n", &StochasticSystem::n)
      .def_property_readonly("m", &StochasticSystem::m)
      .def_property_readonly("p", &StochasticSystem::p)
      .def_property_readonly("A", &StochasticSystem::A)
      .def_property_readonly("B", &StochasticSystem::B)
      .def_property_readonly("C", &StochasticSystem::C)
      .def_property_readonly("N", &StochasticSystem::N)
      .def_property_readonly("K", &StochasticSystem::K)
      .def_property_readonly("nonlinearity", [](const StochasticSystem& s) { return s.f().name(); })
      .def("__repr__", [](const StochasticSystem& s) {
        return "<System n=" + std::to_string(s.n()) + " f=" + s.f().name() + ">";
      });

  m.def(
      "build_reaction_diffusion",
      [](Index n, const std::string& nonlinearity, double a, double length, std::optional<Matrix> K,
         const std::string& boundary) {
        ExperimentConfig cfg;
        cfg.model.n = n;
        cfg.model.nonlinearity = nonlinearity;
        cfg.model.a = a;
        cfg.model.length = length;
        if (K) cfg.model.K = *K;
        if (boundary == "neumann")
          cfg.model.boundary = Boundary::Neumann;
        else if (boundary != "dirichlet")
          throw ConfigError("boundary must be dirichlet or neumann");
        return cfg.build_system();
      },
      py::arg("n") = 20, py::arg("nonlinearity") = "F2", py::arg("a") = 0.1, py::arg("length") = 1.0,
      py::arg("K") = py::none(), py::arg("boundary") = "dirichlet");

  m.def("spectral_abscissa", [](const StochasticSystem& s, double c1) { return spectral_abscissa(s, c1); },
        py::arg("system"), py::arg("c1") = 0.0);

  m.def(
      "compute_gramians",
      [](const StochasticSystem& s, std::optional<double> c1, std::optional<double> c2) {
        const double a = c1.value_or(default_shift(s.f()));
        const double b = c2.value_or(a);
        GramianComputation g;
        {
          py::gil_scoped_release release;
          g = compute_gramians(s, a, b);
        }
        py::dict out;
        out["P"] = g.pair.P;
        out["Q"] = g.pair.Q;
        out["c1"] = g.pair.c1;
        out["c2"] = g.pair.c2;
        out["cert_P"] = g.pair.cert_P;
        out["cert_Q"] = g.pair.cert_Q;
        out["q_residual"] = g.pair.q_residual;
        out["trace_P"] = g.p_stats.trace;
        return out;
      },
      py::arg("system"), py::arg("c1") = py::none(), py::arg("c2") = py::none());

  m.def(
      "hankel_singular_values", [](const Matrix& P, const Matrix& Q) { return hankel_singular_values(P, Q); },
      py::arg("P"), py::arg("Q"));

  m.def(
      "balance",
      [](const StochasticSystem& s, const Matrix& P, const Matrix& Q) {
        const BalancedRealization b = balance(s, P, Q);
        py::dict out;
        out["sigma"] = b.sigma;
        out["S"] = b.S;
        out["S_inv"] = b.S_inv;
        out["floored"] = b.floored;
        out["warnings"] = b.warnings;
        return out;
      },
      py::arg("system"), py::arg("P"), py::arg("Q"));

  m.def(
      "classical_bound",
      [](const Vector& sigma, Index r, const std::string& control, double T, double c) {
        return classical_bound(sigma, r, control_by_name(control, 2), T, c);
      },
      py::arg("sigma"), py::arg("r"), py::arg("control") = "oscillating", py::arg("T") = 1.0, py::arg("c") = 0.0);

  m.def(
      "relative_errors",
      [](const StochasticSystem& s, const Matrix& P, const Matrix& Q, std::vector<Index> r_list,
         const std::string& control, Index n_paths, double T, double dt, std::uint64_t seed,
         std::optional<double> c1, std::optional<double> c2) {
        GramianPair pair;
        pair.P = P;
        pair.Q = Q;
        pair.c1 = c1.value_or(default_shift(s.f()));
        pair.c2 = c2.value_or(pair.c1);
        ErrorReport rep;
        {
          py::gil_scoped_release release;
          const BalancedRealization bal = balance(s, P, Q);
          const NoiseBundle noise(s.K(), TimeGrid::make(T, dt), n_paths, seed);
          rep = error_table(s, bal, pair, r_list, {control_by_name(control, s.m())}, noise);
        }
        py::list rows;
        for (const ErrorRow& r : rep.rows) {
          py::dict d;
          d["r"] = r.r;
          d["rel_error"] = r.rel_error;
          d["mc_se"] = r.mc_se;
          d["classical_bound"] = r.classical_bound;
          d["ratio"] = r.ratio;
          d["excluded_paths"] = r.excluded_paths;
          rows.append(d);
        }
        return rows;
      },
      py::arg("system"), py::arg("P"), py::arg("Q"), py::arg("r_list"), py::arg("control") = "oscillating",
      py::arg("n_paths") = 100, py::arg("T") = 1.0, py::arg("dt") = 1e-3, py::arg("seed") = 1,
      py::arg("c1") = py::none(), py::arg("c2") = py::none());

  m.def(
      "gap_scan",
      [](const Matrix& X, const std::string& nonlinearity, double c2, Index per_axis, bool inverse, double a,
         double lo, double hi) {
        ScanOptions so;
        so.lo = lo;
        so.hi = hi;
        const GapReport r =
            scan_monotonicity_grid(GapForm(nonlinearity_by_name(nonlinearity, a), X, inverse, c2), per_axis, so);
        py::dict out;
        out["points"] = r.points;
        out["values"] = r.values;
        out["positive_fraction"] = r.positive_fraction;
        out["max_positive"] = r.max_positive;
        out["min_value"] = r.min_value;
        return out;
      },
      py::arg("X"), py::arg("nonlinearity") = "F2", py::arg("c2") = 1.0, py::arg("per_axis") = 400,
      py::arg("inverse") = false, py::arg("a") = 0.1, py::arg("lo") = -2.0, py::arg("hi") = 2.0);

  m.def(
      "run_pipeline",
      [](const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed,
         std::optional<Index> paths) {
        ExperimentConfig cfg = ExperimentConfig::load(config_path);
        cfg.output.directory = out_dir;
        if (seed) cfg.simulation.seed = *seed;
        if (paths) cfg.simulation.n_paths = *paths;
        cfg.validate();
        ArtifactWriter writer(out_dir);
        PipelineContext ctx{cfg, writer, nullptr, {}};
        {
          py::gil_scoped_release release;
          run_pipeline(ctx);
        }
        std::vector<std::string> files;
        for (const Artifact& a : writer.artifacts()) files.push_back(a.path);
        return files;
      },
      py::arg("config"), py::arg("out"), py::arg("seed") = py::none(), py::arg("paths") = py::none());

  m.def("sha256_hex", [](const py::bytes& b) { return sha256_hex(std::string(b)); });
}
