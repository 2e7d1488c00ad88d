#include "stochbt/config.hpp"
#include "stochbt/exceptions.hpp"
#include "stochbt/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

using namespace stochbt;

int main(int argc, char** argv) {
  CLI::App app{"Balanced truncation for stochastic systems with polynomial drift"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<long long> paths;
  std::optional<double> dt;
  bool quiet = false;
  app.add_option("--config", config_path, "experiment configuration (INI)")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "artifact directory (overrides [output] directory)");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--paths", paths, "number of Monte Carlo paths")->check(CLI::PositiveNumber);
  app.add_option("--dt", dt, "time step")->check(CLI::PositiveNumber);
  app.add_flag("--quiet,-q", quiet, "no progress messages on stderr");

  const std::map<std::string, std::pair<std::string, std::function<void(PipelineContext&)>>> commands{
      {"stability-check", {"spectral abscissa of the shifted operator and a simulated decay rate", stage_stability_check}},
      {"gramians", {"compute P and Q with certificates", stage_gramians}},
      {"gap-scan", {"monotonicity gap on a grid (n <= 3) or by sampling", stage_gap_scan}},
      {"check-gramians", {"classify the Gramian pair", stage_check_gramians}},
      {"balance", {"balancing transformation, HSVs and reduced models", stage_balance}},
      {"simulate", {"ensemble output statistics of the full model", stage_simulate}},
      {"error-table", {"reduction errors against the a posteriori bounds", stage_error_table}},
      {"run", {"gramians, balance, simulate and error-table, with a manifest", run_pipeline}},
  };
  for (const auto& [name, entry] : commands) app.add_subcommand(name, entry.first);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
    if (out_dir) cfg.output.directory = *out_dir;
    if (seed) cfg.simulation.seed = *seed;
    if (paths) cfg.simulation.n_paths = static_cast<Index>(*paths);
    if (dt) cfg.simulation.dt = *dt;
    cfg.validate();

    ArtifactWriter writer(cfg.output.directory);
    Logger log;
    if (!quiet) log = [](const std::string& msg) { std::cerr << "[stochbt] " << msg << "\n"; };
    PipelineContext ctx{cfg, writer, log, {}};
    if (command != "run") ctx.out.write("config.ini", cfg.to_ini());
    commands.at(command).second(ctx);
    if (command != "run") writer.write_manifest();
    if (!quiet) std::cerr << "[stochbt] wrote " << writer.artifacts().size() << " files to " << writer.directory() << "\n";
    return 0;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}
