#pragma once

#include <string>

#include "tern/data_io.hpp"
#include "tern/metrics.hpp"
#include "tern/model.hpp"
#include "tern/training.hpp"

namespace tern {

struct Paths {
  std::string features;
  std::string captions;
  std::string splits;
  std::string relevance;
  std::string embeddings;
  std::string checkpoint;
  std::string output_dir;
};

// Union of all module configs plus file locations and the run seed. Loaded
// from a single JSON file; unknown keys are rejected.
struct RunConfig {
  uint64_t seed = 0;
  TernConfig model;
  TrainConfig train;
  EvalConfig eval;
  GenConfig gen;
  Paths paths;

  void validate() const;
};

RunConfig run_config_from_json_text(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json_text(const RunConfig& cfg);

// Applies one `--set key=value` override with a dotted key path, e.g.
// "model.heads=2" or "eval.recall_ks=1,5". Unknown keys -> ConfigError.
void apply_override(RunConfig& cfg, const std::string& assignment);

// Writes the resolved config next to a run's outputs.
void write_resolved_config(const std::string& dir, const RunConfig& cfg);

}  // namespace tern
