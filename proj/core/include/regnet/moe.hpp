#pragma once

#include <random>
#include <string>
#include <vector>

#include "regnet/nn.hpp"

namespace regnet {

struct GateConfig {
  std::size_t num_experts = 15;
  std::size_t top_k = 4;
  bool noise_enabled = true;
  // false: softmax over all logits, then keep the K largest (weights not renormalized).
  // true:  keep the K largest logits, softmax over those.
  bool renormalize = false;

  void validate() const;
};

/// Noisy top-K router: TopK(softmax(x W + z * softplus(x W_noise))), z ~ N(0, 1).
/// The noise sample is drawn outside the graph and enters as a constant.
class NoisyTopKGate {
 public:
  NoisyTopKGate() = default;
  NoisyTopKGate(ParameterStore& store, Initializer& init, const std::string& name, std::size_t input_dim,
                GateConfig cfg);

  /// batch x N gate weights with exactly K nonzero entries per row. `rng` is
  /// only consulted when noise is enabled; pass nullptr to force it off.
  DiffValue operator()(const DiffValue& x, std::mt19937_64* rng) const;

  const GateConfig& config() const { return cfg_; }
  const DiffValue& weight() const { return w_; }
  const DiffValue& noise_weight() const { return w_noise_; }

 private:
  GateConfig cfg_;
  DiffValue w_;
  DiffValue w_noise_;
};

/// Indices of the K largest entries per row (ties broken toward lower index).
std::vector<std::vector<std::size_t>> top_k_indices(std::span<const double> values, std::size_t rows,
                                                     std::size_t cols, std::size_t k);

class ExpertBank {
 public:
  ExpertBank() = default;
  ExpertBank(ParameterStore& store, Initializer& init, const std::string& name, std::size_t num_experts,
             std::size_t dim);

  std::size_t size() const { return experts_.size(); }
  const Mlp2& expert(std::size_t i) const { return experts_[i]; }

 private:
  std::vector<Mlp2> experts_;
};

/// y_t = sum_n G_t[:, n] * E_n(x) for each gate matrix G_t. Each expert runs
/// only on the rows that select it under at least one gate, so experts with
/// no selected rows receive no gradient.
std::vector<DiffValue> moe_combine(const DiffValue& x, const ExpertBank& bank, const std::vector<DiffValue>& gates);

/// Single-gate convenience form.
DiffValue moe_forward(const DiffValue& x, const ExpertBank& bank, const NoisyTopKGate& gate, std::mt19937_64* rng);

/// Coefficient-of-variation-squared of per-expert importance (sum of gate
/// weights over the batch); an optional load-balancing penalty.
DiffValue importance_loss(const DiffValue& gates);

/// One independent linear -> silu -> linear head per task, concatenated.
class TaskHeads {
 public:
  TaskHeads() = default;
  TaskHeads(ParameterStore& store, Initializer& init, const std::string& name, std::size_t num_tasks,
            std::size_t dim, std::size_t hidden);

  std::size_t size() const { return heads_.size(); }
  /// Head t applied to inputs[t]; returns batch x T.
  DiffValue operator()(const std::vector<DiffValue>& inputs) const;
  /// Every head applied to the same input.
  DiffValue operator()(const DiffValue& shared) const;

 private:
  std::vector<Mlp2> heads_;
};

struct ExpertUsage {
  std::vector<std::string> tasks;
  std::vector<std::vector<double>> frequencies;  // per task, sums to 1
  std::vector<std::vector<double>> similarity;   // T x T cosine similarity
};

enum class UsageMode { GateWeights, TopOneIndicator };

/// Accumulates gate rows per task; tasks may see different subsets of rows.
class ExpertUsageAccumulator {
 public:
  ExpertUsageAccumulator(std::vector<std::string> tasks, std::size_t num_experts,
                         UsageMode mode = UsageMode::GateWeights);

  void add(std::size_t task, std::span<const double> gate_row);
  void merge(const ExpertUsageAccumulator& other);
  /// Throws EmptySplit when some task saw no rows.
  ExpertUsage finish() const;

 private:
  std::vector<std::string> tasks_;
  std::size_t num_experts_;
  UsageMode mode_;
  std::vector<std::vector<double>> totals_;
  std::vector<std::size_t> counts_;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// {"tasks": [...], "frequencies": {task: [...]}, "similarity": [[...]]}
std::string expert_usage_json(const ExpertUsage& usage);
std::string expert_usage_table(const ExpertUsage& usage);

}  // namespace regnet
