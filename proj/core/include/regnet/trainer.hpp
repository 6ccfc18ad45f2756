#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "regnet/checkpoint.hpp"
#include "regnet/config.hpp"
#include "regnet/model.hpp"

namespace regnet {

struct MaskedLoss {
  DiffValue loss;            // 1x1
  std::size_t present = 0;   // number of labels that contributed
  bool empty() const { return present == 0; }
};

/// Mean of |pred - label| over entries whose mask is 1, pooled over all tasks.
/// With no present entries the loss is a constant 0.
MaskedLoss masked_l1(const DiffValue& preds, std::span<const double> labels, std::span<const double> mask);

/// Prepares structures (graphs, reciprocal bases) on up to `threads` workers.
/// Output order matches input order regardless of thread count.
std::vector<PreparedStructure> prepare_all(const std::vector<CrystalStructure>& records, const ModelConfig& cfg,
                                           std::size_t threads = 1);

/// Per-task label mean and scale over present labels; scale falls back to 1
/// for constant or single-sample tasks.
LabelStats compute_label_stats(const std::vector<PreparedStructure>& data, std::size_t num_tasks, bool standardize);

struct Evaluation {
  std::vector<double> mae;              // per task, original units; NaN when absent
  std::vector<std::size_t> count;       // labels seen per task
  std::vector<std::vector<double>> predictions;  // per structure, original units
};

/// Eval-mode (running BN statistics, no gate noise) predictions and MAE.
Evaluation evaluate(const Model& model, const std::vector<PreparedStructure>& data, const LabelStats& stats,
                    std::size_t batch_size = 64);

/// Per-task expert selection frequencies over `data` (eval mode, noise off).
/// Requires a multi-task model; an empty split raises EmptySplit.
ExpertUsage compute_expert_usage(const Model& model, const std::vector<PreparedStructure>& data,
                                 UsageMode mode = UsageMode::GateWeights, std::size_t batch_size = 64);

/// Mean of the finite entries, NaN when there are none.
double mean_finite(const std::vector<double>& v);

struct TrainOptions {
  std::string output_dir;  // empty: nothing is written to disk
  // Stop once this many epochs have completed in total; used to interrupt a
  // run for resume testing. Defaults to the configured epoch count.
  std::optional<std::size_t> stop_after;
  std::function<void(const MetricRecord&)> on_metric;
};

struct TrainOutcome {
  Checkpoint last;
  Checkpoint best;
};

/// Minibatch AdamW with a one-cycle schedule over cfg.train.epochs. Batch order
/// derives from (seed, epoch) and gate noise from (seed, step), so a run resumed
/// from any epoch-boundary checkpoint matches the uninterrupted run bitwise.
TrainOutcome train(const RunConfig& cfg, const std::vector<PreparedStructure>& train_set,
                   const std::vector<PreparedStructure>& val_set, const TrainOptions& opts = {},
                   const Checkpoint* resume = nullptr);

struct SplitData {
  std::vector<CrystalStructure> train, val, test;
};

/// Applies cfg.train.split to the records.
SplitData split_records(const std::vector<CrystalStructure>& records, const SplitSpec& spec);

struct AblationRun {
  std::uint64_t seed = 0;
  double with_reciprocal = 0.0;     // best validation MAE, averaged over tasks
  double without_reciprocal = 0.0;
};

struct AblationResult {
  std::vector<AblationRun> runs;
  std::size_t reciprocal_wins() const;
};

/// Paired runs per seed with and without the reciprocal block; everything else
/// (split, budget, initialization seed) is shared within a pair.
AblationResult run_ablation(const RunConfig& cfg, const std::vector<CrystalStructure>& records,
                            const std::vector<std::uint64_t>& seeds, std::size_t threads = 1,
                            const std::function<void(const std::string&)>& log = {});

/// splitmix64 finalizer used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace regnet
