#include "stochbt/config.hpp"
#include "stochbt/exceptions.hpp"
#include "stochbt/io.hpp"
#include "stochbt/pipeline.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <sstream>

using namespace stochbt;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stochbt_test_" + name);
  fs::remove_all(p);
  return p;
}

const char* kSmall = R"(
[model]
n = 5
nonlinearity = F2

[balancing]
r_list = 2, 5

[simulation]
T = 0.2
dt = 1e-3
n_paths = 16
seed = 3
controls = oscillating
gap_bound = on
)";

}  // namespace

TEST_CASE("io: numbers round-trip") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345.678}) CHECK(std::stod(io::num(v)) == v);
  CHECK(io::num(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(io::num(-std::numeric_limits<double>::infinity()) == "-inf");

  const fs::path dir = fresh_dir("io");
  fs::create_directories(dir);
  Matrix M(2, 3);
  M << 1.0 / 3.0, -2.0, 1e-17, 4.0, 5.5, -6.25;
  std::ostringstream os;
  io::write_matrix_csv(os, M);
  io::write_text((dir / "m.csv").string(), os.str());
  CHECK(io::read_matrix_csv((dir / "m.csv").string()) == M);
}

TEST_CASE("config: defaults and overrides") {
  const ExperimentConfig d;
  CHECK(d.model.n == 20);
  CHECK(d.simulation.n_paths == 1000);
  CHECK(d.dt() == doctest::Approx(1e-3));
  CHECK(d.c1() == 1.0);

  const ExperimentConfig c = ExperimentConfig::parse(kSmall);
  CHECK(c.model.n == 5);
  CHECK(c.balancing.r_list == std::vector<Index>{2, 5});
  CHECK(c.simulation.gap_bound);
  CHECK(c.controls().size() == 1);
  CHECK(c.build_system().n() == 5);

  const ExperimentConfig f1 = ExperimentConfig::parse("[model]\nnonlinearity = F1\na = 0.1\n");
  CHECK(f1.c1() == doctest::Approx(0.91 / 3.0));
}

TEST_CASE("config: round trip through to_ini") {
  const ExperimentConfig c = ExperimentConfig::parse(kSmall);
  const ExperimentConfig again = ExperimentConfig::parse(c.to_ini());
  CHECK(again.to_ini() == c.to_ini());
}

TEST_CASE("config: invalid input is rejected") {
  CHECK_THROWS_AS(ExperimentConfig::parse("[model]\nsize = 3\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[nowhere]\nn = 3\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[model]\nn = three\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[model]\nK = 1, 2; 3\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[simulation]\ncontrols = wobbly\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[simulation]\nT = 1\ndt = 0.3\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/file.cfg"), ConfigError);
}

TEST_CASE("pipeline: sha256 and exit codes") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(UnsupportedError("x")) == 2);
  CHECK(exit_code_for(StabilityError("x")) == 3);
  CHECK(exit_code_for(ConditioningError("x")) == 3);
  CHECK(exit_code_for(DivergenceError("x")) == 4);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
  CHECK(exit_code_for(StageError("s", "m", "h", 3)) == 3);
}

TEST_CASE("pipeline: run is deterministic and the manifest is complete") {
  std::vector<std::string> manifests;
  for (const char* name : {"run_a", "run_b"}) {
    const fs::path dir = fresh_dir(name);
    ArtifactWriter out(dir.string());
    PipelineContext ctx{ExperimentConfig::parse(kSmall), out, nullptr, {}};
    ctx.config.output.directory = "fixed";
    run_pipeline(ctx);
    const auto doc = nlohmann::json::parse(io::read_text((dir / "manifest.json").string()));
    std::size_t count = 0;
    for (const auto& entry : doc["files"]) {
      const std::string content = io::read_text((dir / entry["path"].get<std::string>()).string());
      CHECK(sha256_hex(content) == entry["sha256"].get<std::string>());
      CHECK(content.size() == entry["bytes"].get<std::size_t>());
      ++count;
    }
    std::size_t on_disk = 0;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().filename() != "manifest.json") ++on_disk;
    CHECK(count == on_disk);
    CHECK(fs::exists(dir / "error_table_F2.csv"));
    manifests.push_back(doc["files"].dump());
  }
  CHECK(manifests[0] == manifests[1]);
}

TEST_CASE("pipeline: singular K fails at the gramians stage with a configuration status") {
  const fs::path dir = fresh_dir("singular");
  ArtifactWriter out(dir.string());
  const auto cfg =
      ExperimentConfig::parse("[model]\nn = 5\nK = 0.25, 0.25; 0.25, 0.25\n[balancing]\nr_list = 2\n");
  PipelineContext ctx{cfg, out, nullptr, {}};
  try {
    stage_gramians(ctx);
    FAIL("expected a StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "gramians");
    CHECK(e.exit_code() == 2);
    CHECK_FALSE(e.hint().empty());
  }
}

TEST_CASE("pipeline: individual stages write their artifacts") {
  const fs::path dir = fresh_dir("stages");
  ArtifactWriter out(dir.string());
  ExperimentConfig cfg = ExperimentConfig::parse(kSmall);
  cfg.gap_scan.samples = 2000;
  PipelineContext ctx{cfg, out, nullptr, {}};
  stage_stability_check(ctx);
  stage_gramians(ctx);
  stage_gap_scan(ctx);
  stage_check_gramians(ctx);
  stage_balance(ctx);
  stage_simulate(ctx);
  for (const char* f : {"stability.json", "P.csv", "Q.csv", "gramians.json", "gap_scan.json", "classification.json",
                        "sigma.csv", "S.csv", "reduced_r2_A.csv", "output_stats_oscillating.csv"})
    CHECK_MESSAGE(fs::exists(dir / f), f);
  const auto g = nlohmann::json::parse(io::read_text((dir / "gramians.json").string()));
  CHECK(g["certified"].get<bool>());
}
