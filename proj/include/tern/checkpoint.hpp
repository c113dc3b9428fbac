#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tern/adam.hpp"
#include "tern/config.hpp"
#include "tern/data_io.hpp"
#include "tern/model.hpp"

namespace tern {

// Optimizer state carried by training checkpoints so runs can resume with
// continued epoch numbering.
struct TrainState {
  int next_epoch = 0;
  AdamState adam;
};

// Container layout (version 1, all integers little-endian):
//   magic "TERNCKPT", u16 version,
//   length-prefixed config JSON (the full resolved run config),
//   vocab table: u32 count, count length-prefixed UTF-8 tokens (ids 3..),
//   parameters: u32 count, then per entry: length-prefixed name, u32 rank,
//     u32 dims[rank], f32 values row-major,
//   u8 has_train_state; if set: u32 next_epoch, u64 adam step, f64 lr/beta1/
//     beta2/eps, then per parameter (same order) f32 m values and f32 v
//     values.
// Shared-layer parameters appear exactly once: the store holds one physical
// copy referenced by both pipelines.
void save_checkpoint(const std::string& path, const TernModel& model, const Vocabulary& vocab,
                     const RunConfig& config, const TrainState* train_state = nullptr);

struct LoadedCheckpoint {
  RunConfig config;
  Vocabulary vocab;
  std::unique_ptr<TernModel> model;
  std::optional<TrainState> train_state;
};

// Rebuilds the model from the stored config and vocab, then binds every
// stored entry by name. Missing/extra/mis-shaped entries -> DataError.
// `adjust_config`, when given, runs on the stored config before the model is
// rebuilt (command-line overrides); a resulting dimension mismatch surfaces
// as a DataError during binding.
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::function<void(RunConfig&)>& adjust_config = {});

struct CheckpointEntry {
  std::string name;
  std::vector<int> shape;
};

struct CheckpointInfo {
  uint16_t version = 0;
  std::string config_json;
  int vocab_count = 0;
  std::vector<CheckpointEntry> entries;
  bool has_train_state = false;
};

// Reads headers and entry metadata without building a model.
CheckpointInfo inspect_checkpoint(const std::string& path);

}  // namespace tern
