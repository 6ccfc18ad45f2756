#pragma once

#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "regnet/config.hpp"
#include "regnet/model.hpp"
#include "regnet/optim.hpp"

namespace regnet {

// File layout:
//   8 bytes   "REGNETCK"
//   8 bytes   header length, unsigned little-endian
//   header    JSON: version, config, atom features, array table, training state
//   payload   little-endian float64 arrays at the offsets listed in the header
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct MetricRecord {
  std::size_t epoch = 0;
  std::string split;
  std::vector<double> mae;  // per task; NaN when the split has no label for it
  double loss = 0.0;
  double lr = 0.0;
};

struct LabelStats {
  std::vector<double> mean;
  std::vector<double> scale;
};

struct TrainingState {
  std::size_t epochs_done = 0;
  std::int64_t step = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  LabelStats stats;
  std::vector<MetricRecord> history;
};

struct StoredArray {
  std::string name;
  Shape shape;
  bool trainable = true;
  std::vector<double> values;
};

struct Checkpoint {
  RunConfig config;
  std::string atom_features_json;  // empty: the default one-hot table
  std::vector<StoredArray> arrays;
  AdamWState optimizer;
  TrainingState state;
};

Checkpoint capture_checkpoint(const RunConfig& cfg, const Model& model, const AdamWState& optimizer,
                              const TrainingState& state);

/// Rebuilds the model described by the checkpoint and copies every stored
/// array into it. Names and shapes must match exactly.
std::unique_ptr<Model> restore_model(const Checkpoint& ckpt);
void copy_arrays_into(const Checkpoint& ckpt, ParameterStore& store);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

/// Writes to a temporary file and renames it into place.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace regnet
