#pragma once

#include "stochbt/balancing.hpp"
#include "stochbt/config.hpp"
#include "stochbt/exceptions.hpp"
#include "stochbt/gramians.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace stochbt {

/// 0 success, 2 configuration, 3 numerical/stability, 4 divergence, 1 other.
int exit_code_for(const std::exception& e);

/// An error tagged with the pipeline stage that raised it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message, std::string hint, int exit_code);
  const std::string& stage() const { return stage_; }
  const std::string& hint() const { return hint_; }
  int exit_code() const { return exit_code_; }

 private:
  std::string stage_;
  std::string hint_;
  int exit_code_;
};

/// Hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& data);

struct Artifact {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

/// Writes files into one directory and records them for the manifest.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::string directory);
  const std::string& directory() const { return dir_; }
  void write(const std::string& name, const std::string& content);
  const std::vector<Artifact>& artifacts() const { return files_; }
  /// manifest.json listing every file written so far (not itself).
  void write_manifest();

 private:
  std::string dir_;
  std::vector<Artifact> files_;
};

using Logger = std::function<void(const std::string&)>;

/// Intermediate results shared by stages within one invocation.
struct PipelineCache {
  std::optional<StochasticSystem> system;
  std::optional<GramianComputation> gramians;
  std::optional<BalancedRealization> balanced;
};

struct PipelineContext {
  ExperimentConfig config;
  ArtifactWriter& out;
  Logger log;
  PipelineCache cache;
};

/// Individual stages; each writes its own artifacts and a JSON summary.
void stage_stability_check(PipelineContext& ctx);
void stage_gramians(PipelineContext& ctx);
void stage_gap_scan(PipelineContext& ctx);
void stage_check_gramians(PipelineContext& ctx);
void stage_balance(PipelineContext& ctx);
void stage_simulate(PipelineContext& ctx);
void stage_error_table(PipelineContext& ctx);

/// model -> gramians -> balance -> simulate -> error-table, then the manifest.
void run_pipeline(PipelineContext& ctx);

/// Runs fn as stage `name`, converting library errors to StageError.
void run_stage(const std::string& name, const std::function<void()>& fn);

}  // namespace stochbt
