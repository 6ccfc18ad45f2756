#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "regnet/crystal.hpp"
#include "regnet/embeddings.hpp"
#include "regnet/moe.hpp"
#include "regnet/periodic_graph.hpp"
#include "regnet/reciprocal.hpp"
#include "regnet/short_range.hpp"

namespace regnet {

enum class Fusion { MergeEveryBlock, SeparateStreams };

struct MoeConfig {
  GateConfig gate;
  // Weight of the optional importance (load-balancing) penalty; 0 disables it.
  double importance_weight = 0.0;
  // One gate per task over a shared expert bank. With false, all tasks share one gate.
  bool per_task_gates = true;
};

struct ModelConfig {
  std::size_t num_blocks = 3;
  std::size_t hidden = 256;
  int k_neighbors = 16;
  double radius_scale = 1.0;
  int kmax = 1;
  bool include_zero_frequency = false;
  bool reciprocal = true;  // false: "w/o reciprocal" ablation, global stream passes through unchanged
  FilterMode filter_mode = FilterMode::ContinuousMlp;
  std::size_t filter_hidden = 64;
  double filter_init_scale = 1e-5;
  Fusion fusion = Fusion::MergeEveryBlock;
  Aggregation aggregation = Aggregation::Sum;
  EdgeFeatureConfig edge;
  std::size_t head_hidden = 128;
  std::optional<MoeConfig> moe;
  std::vector<std::string> tasks{"formation_energy"};
  std::uint64_t seed = 0;
  std::string atom_features;  // JSON table path; empty means one-hot(Z)

  bool multi_task() const { return moe.has_value(); }
  std::size_t num_frequencies() const;
  void validate() const;
};

/// Per-structure geometry derived once and reused across epochs.
struct PreparedStructure {
  std::string id;
  std::vector<int> atomic_numbers;
  std::vector<Vec3> frac_coords;
  ReciprocalBasis basis;
  std::vector<std::size_t> edge_src;
  std::vector<std::size_t> edge_dst;
  std::vector<double> edge_distance;
  std::vector<std::optional<double>> labels;  // one per configured task

  std::size_t num_atoms() const { return atomic_numbers.size(); }
};

PreparedStructure prepare_structure(const CrystalStructure& s, const ModelConfig& cfg);

struct BatchedInput {
  std::vector<int> atomic_numbers;
  std::vector<std::size_t> segment;  // node -> structure
  EdgeIndex edges;
  std::vector<double> edge_distance;
  ReciprocalBatch reciprocal;
  std::size_t num_structures = 0;
  std::size_t num_tasks = 0;
  std::vector<double> labels;  // num_structures x num_tasks, 0 where absent
  std::vector<double> mask;    // 1 where a label is present
  std::vector<std::string> ids;
};

BatchedInput make_batch(const std::vector<const PreparedStructure*>& structures, std::size_t num_tasks);

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* noise_rng = nullptr;  // gate noise; nullptr disables it
};

struct ForwardResult {
  DiffValue predictions;         // num_structures x T
  DiffValue pooled;              // num_structures x d
  std::vector<DiffValue> gates;  // one num_structures x N matrix per gate (MT only)
  DiffValue aux_loss;            // importance penalty, or an invalid value when unused
  std::vector<double> reciprocal_ratio;  // per block ||g|| / ||h_global||
};

class Model {
 public:
  /// Parameters are initialized deterministically from cfg.seed.
  explicit Model(ModelConfig cfg);
  Model(ModelConfig cfg, AtomFeatureTable table);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  const AtomFeatureTable& atom_features() const { return table_; }

  ForwardResult forward(const BatchedInput& batch, const ForwardOptions& opts = {}) const;
  /// Gate index used by task t.
  std::size_t gate_for_task(std::size_t t) const;

 private:
  void build();

  ModelConfig cfg_;
  AtomFeatureTable table_;
  ParameterStore store_;
  AtomEmbedding atom_embed_;
  GlobalInit global_init_;
  EdgeEmbedding edge_embed_;
  std::vector<LocalLayer> local_;
  std::vector<ReciprocalBlock> recip_;
  Mlp2 stl_head_;
  ExpertBank experts_;
  std::vector<NoisyTopKGate> gates_;
  TaskHeads task_heads_;
};

AtomFeatureTable load_atom_features(const ModelConfig& cfg);

}  // namespace regnet
