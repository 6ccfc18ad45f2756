#include "regnet/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <thread>

#include "regnet/dataset.hpp"
#include "regnet/error.hpp"

namespace regnet {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

MaskedLoss masked_l1(const DiffValue& preds, std::span<const double> labels, std::span<const double> mask) {
  const Shape shape = preds.shape();
  if (labels.size() != shape.size() || mask.size() != shape.size()) {
    raise(ErrorKind::ShapeError, "masked_l1: labels/mask do not match predictions " + to_string(shape));
  }
  MaskedLoss out;
  std::vector<double> clean(labels.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (mask[i] != 0.0) {
      ++out.present;
      clean[i] = labels[i];
    }
  }
  if (out.present == 0) {
    out.loss = DiffValue::scalar(0.0);
    return out;
  }
  const DiffValue err = ad::abs(ad::sub(preds, DiffValue::constant(shape, std::move(clean))));
  const DiffValue masked = ad::mul(err, DiffValue::constant(shape, std::vector<double>(mask.begin(), mask.end())));
  out.loss = ad::scale(ad::sum(masked), 1.0 / static_cast<double>(out.present));
  return out;
}

std::vector<PreparedStructure> prepare_all(const std::vector<CrystalStructure>& records, const ModelConfig& cfg,
                                           std::size_t threads) {
  std::vector<PreparedStructure> out(records.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, records.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < records.size(); ++i) out[i] = prepare_structure(records[i], cfg);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < records.size(); i += workers) out[i] = prepare_structure(records[i], cfg);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

LabelStats compute_label_stats(const std::vector<PreparedStructure>& data, std::size_t num_tasks, bool standardize) {
  LabelStats stats{std::vector<double>(num_tasks, 0.0), std::vector<double>(num_tasks, 1.0)};
  if (!standardize) return stats;
  for (std::size_t t = 0; t < num_tasks; ++t) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : data) {
      if (t < s.labels.size() && s.labels[t]) {
        sum += *s.labels[t];
        ++n;
      }
    }
    if (n == 0) continue;
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& s : data)
      if (t < s.labels.size() && s.labels[t]) ss += (*s.labels[t] - mean) * (*s.labels[t] - mean);
    const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    stats.mean[t] = mean;
    stats.scale[t] = sd > 1e-12 ? sd : 1.0;
  }
  return stats;
}

namespace {

std::vector<double> standardized(const BatchedInput& b, const LabelStats& stats) {
  std::vector<double> out(b.labels.size(), 0.0);
  for (std::size_t i = 0; i < b.num_structures; ++i)
    for (std::size_t t = 0; t < b.num_tasks; ++t) {
      const std::size_t k = i * b.num_tasks + t;
      if (b.mask[k] != 0.0) out[k] = (b.labels[k] - stats.mean[t]) / stats.scale[t];
    }
  return out;
}

std::vector<const PreparedStructure*> pointers(const std::vector<PreparedStructure>& data, const std::size_t* idx,
                                               std::size_t n) {
  std::vector<const PreparedStructure*> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(&data[idx ? idx[i] : i]);
  return out;
}

double grad_norm(const ParameterStore& store) {
  double s = 0.0;
  for (const auto& p : store.all()) {
    if (!p.trainable || !p.value.has_grad()) continue;
    for (double g : p.value.grad()) s += g * g;
  }
  return std::sqrt(s);
}

struct MaeAccumulator {
  std::vector<double> abs_sum;
  std::vector<std::size_t> count;

  explicit MaeAccumulator(std::size_t tasks) : abs_sum(tasks, 0.0), count(tasks, 0) {}

  void add(const BatchedInput& b, std::span<const double> preds_std, const LabelStats& stats) {
    for (std::size_t i = 0; i < b.num_structures; ++i)
      for (std::size_t t = 0; t < b.num_tasks; ++t) {
        const std::size_t k = i * b.num_tasks + t;
        if (b.mask[k] == 0.0) continue;
        abs_sum[t] += std::abs(preds_std[k] * stats.scale[t] + stats.mean[t] - b.labels[k]);
        ++count[t];
      }
  }

  std::vector<double> mae() const {
    std::vector<double> out(abs_sum.size());
    for (std::size_t t = 0; t < out.size(); ++t)
      out[t] = count[t] ? abs_sum[t] / static_cast<double>(count[t]) : std::numeric_limits<double>::quiet_NaN();
    return out;
  }
};

// Scale-free selection score: per-task MAE divided by the label scale, averaged.
double selection_score(const std::vector<double>& mae, const LabelStats& stats) {
  std::vector<double> scaled(mae.size());
  for (std::size_t t = 0; t < mae.size(); ++t) scaled[t] = mae[t] / stats.scale[t];
  return mean_finite(scaled);
}

void write_metrics_csv(const std::string& path, const std::vector<std::string>& tasks,
                       const std::vector<MetricRecord>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(ErrorKind::IoError, "cannot write '" + path + "'");
  out << "epoch,split";
  for (const auto& t : tasks) out << ",mae_" << t;
  out << ",loss,lr\n";
  out.precision(10);
  for (const auto& m : history) {
    out << m.epoch << ',' << m.split;
    for (double v : m.mae) {
      out << ',';
      if (std::isfinite(v)) out << v;
    }
    out << ',';
    if (std::isfinite(m.loss)) out << m.loss;
    out << ',' << m.lr << '\n';
  }
}

}  // namespace

double mean_finite(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v)
    if (std::isfinite(x)) {
      s += x;
      ++n;
    }
  return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

Evaluation evaluate(const Model& model, const std::vector<PreparedStructure>& data, const LabelStats& stats,
                    std::size_t batch_size) {
  if (batch_size == 0) raise(ErrorKind::ConfigError, "batch_size must be positive");
  const std::size_t T = model.config().tasks.size();
  ad::NoGradGuard no_grad;
  MaeAccumulator acc(T);
  Evaluation ev;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - start);
    std::vector<const PreparedStructure*> ptrs;
    for (std::size_t i = 0; i < n; ++i) ptrs.push_back(&data[start + i]);
    const BatchedInput b = make_batch(ptrs, T);
    const ForwardResult r = model.forward(b);
    const auto p = r.predictions.data();
    acc.add(b, p, stats);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> row(T);
      for (std::size_t t = 0; t < T; ++t) row[t] = p[i * T + t] * stats.scale[t] + stats.mean[t];
      ev.predictions.push_back(std::move(row));
    }
  }
  ev.mae = acc.mae();
  ev.count = acc.count;
  return ev;
}

ExpertUsage compute_expert_usage(const Model& model, const std::vector<PreparedStructure>& data, UsageMode mode,
                                 std::size_t batch_size) {
  if (!model.config().moe) raise(ErrorKind::ConfigError, "expert usage needs a multi-task (MoE) checkpoint");
  if (data.empty()) raise(ErrorKind::EmptySplit, "expert usage over an empty split");
  if (batch_size == 0) raise(ErrorKind::ConfigError, "batch_size must be positive");
  const auto& tasks = model.config().tasks;
  ExpertUsageAccumulator acc(tasks, model.config().moe->gate.num_experts, mode);
  ad::NoGradGuard no_grad;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - start);
    std::vector<const PreparedStructure*> ptrs;
    for (std::size_t i = 0; i < n; ++i) ptrs.push_back(&data[start + i]);
    const BatchedInput b = make_batch(ptrs, tasks.size());
    const ForwardResult r = model.forward(b);
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const DiffValue& g = r.gates[model.gate_for_task(t)];
      for (std::size_t i = 0; i < n; ++i) acc.add(t, g.data().subspan(i * g.cols(), g.cols()));
    }
  }
  return acc.finish();
}

TrainOutcome train(const RunConfig& cfg, const std::vector<PreparedStructure>& train_set,
                   const std::vector<PreparedStructure>& val_set, const TrainOptions& opts, const Checkpoint* resume) {
  const TrainConfig& tc = cfg.train;
  if (tc.batch_size == 0) raise(ErrorKind::ConfigError, "batch_size must be positive");
  if (train_set.empty() && tc.epochs > 0) raise(ErrorKind::EmptySplit, "training split is empty");

  std::unique_ptr<Model> model;
  AdamWState opt;
  TrainingState state;
  if (resume) {
    model = restore_model(*resume);
    opt = resume->optimizer;
    state = resume->state;
  } else {
    model = std::make_unique<Model>(cfg.model);
    opt = make_adamw_state(model->params());
    state.stats = compute_label_stats(train_set, cfg.model.tasks.size(), tc.standardize);
  }
  RunConfig run_cfg = cfg;
  run_cfg.model = model->config();
  const std::size_t T = run_cfg.model.tasks.size();

  const std::size_t per_epoch = (train_set.size() + tc.batch_size - 1) / tc.batch_size;
  const auto total_steps = static_cast<std::int64_t>(per_epoch * tc.epochs);
  const std::size_t stop = std::min(tc.epochs, opts.stop_after.value_or(tc.epochs));

  if (!opts.output_dir.empty()) std::filesystem::create_directories(opts.output_dir);
  TrainOutcome outcome;
  outcome.last = capture_checkpoint(run_cfg, *model, opt, state);
  outcome.best = outcome.last;

  double last_grad_norm = 0.0;
  for (std::size_t epoch = state.epochs_done; epoch < stop; ++epoch) {
    const auto order = shuffled_indices(train_set.size(), mix_seed(tc.seed, epoch));
    MaeAccumulator acc(T);
    double loss_sum = 0.0;
    std::size_t loss_batches = 0;
    double lr = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t n = std::min(tc.batch_size, order.size() - start);
      const BatchedInput b = make_batch(pointers(train_set, order.data() + start, n), T);
      const std::vector<double> target = standardized(b, state.stats);
      lr = onecycle_lr(state.step, total_steps, tc.schedule);
      std::mt19937_64 noise(mix_seed(tc.seed ^ 0x5eedULL, static_cast<std::uint64_t>(state.step)));
      const ForwardResult r = model->forward(b, {true, &noise});
      MaskedLoss ml = masked_l1(r.predictions, target, b.mask);
      DiffValue loss = ml.loss;
      if (r.aux_loss.valid()) loss = ad::add(loss, r.aux_loss);
      if (!std::isfinite(loss.item())) {
        std::ostringstream msg;
        msg << "loss is " << loss.item() << " at epoch " << epoch + 1 << ", step " << state.step << ", lr " << lr
            << ", previous gradient norm " << last_grad_norm << "; batch ids:";
        for (const auto& id : b.ids) msg << ' ' << id;
        raise(ErrorKind::NonFiniteLoss, msg.str());
      }
      acc.add(b, r.predictions.data(), state.stats);
      model->params().zero_grad();
      if (ml.empty() && !r.aux_loss.valid()) {
        // Nothing to learn from; still advance the schedule so resume stays aligned.
        ++state.step;
        continue;
      }
      ad::backward(loss);
      last_grad_norm = grad_norm(model->params());
      try {
        adamw_step(model->params(), opt, lr, tc.optimizer);
      } catch (const Error& e) {
        std::ostringstream msg;
        msg << e.what() << " (epoch " << epoch + 1 << ", step " << state.step << ", lr " << lr << "; batch ids:";
        for (const auto& id : b.ids) msg << ' ' << id;
        msg << ")";
        raise(e.kind(), msg.str());
      }
      loss_sum += loss.item();
      ++loss_batches;
      ++state.step;
    }
    model->params().zero_grad();
    state.epochs_done = epoch + 1;

    MetricRecord tr{epoch + 1, "train", acc.mae(), loss_batches ? loss_sum / static_cast<double>(loss_batches) : 0.0, lr};
    state.history.push_back(tr);
    if (opts.on_metric) opts.on_metric(tr);

    double score = selection_score(tr.mae, state.stats);
    if (!val_set.empty()) {
      const Evaluation ev = evaluate(*model, val_set, state.stats, tc.batch_size);
      MetricRecord vr{epoch + 1, "val", ev.mae, std::numeric_limits<double>::quiet_NaN(), lr};
      state.history.push_back(vr);
      if (opts.on_metric) opts.on_metric(vr);
      score = selection_score(ev.mae, state.stats);
    }
    const bool improved = std::isfinite(score) && score < state.best_val;
    if (improved) {
      state.best_val = score;
      state.best_epoch = epoch + 1;
    }
    outcome.last = capture_checkpoint(run_cfg, *model, opt, state);
    if (improved) outcome.best = outcome.last;
    if (!opts.output_dir.empty()) {
      const std::filesystem::path dir(opts.output_dir);
      save_checkpoint((dir / "last.ckpt").string(), outcome.last);
      if (improved) save_checkpoint((dir / "best.ckpt").string(), outcome.best);
      write_metrics_csv((dir / "metrics.csv").string(), run_cfg.model.tasks, state.history);
    }
  }
  if (!opts.output_dir.empty() && state.epochs_done == 0) {
    const std::filesystem::path dir(opts.output_dir);
    save_checkpoint((dir / "last.ckpt").string(), outcome.last);
    save_checkpoint((dir / "best.ckpt").string(), outcome.best);
  }
  return outcome;
}

SplitData split_records(const std::vector<CrystalStructure>& records, const SplitSpec& spec) {
  const SplitIndices idx = split_indices(records.size(), spec);
  SplitData out;
  for (std::size_t i : idx.train) out.train.push_back(records[i]);
  for (std::size_t i : idx.val) out.val.push_back(records[i]);
  for (std::size_t i : idx.test) out.test.push_back(records[i]);
  return out;
}

std::size_t AblationResult::reciprocal_wins() const {
  std::size_t wins = 0;
  for (const auto& r : runs)
    if (r.with_reciprocal < r.without_reciprocal) ++wins;
  return wins;
}

AblationResult run_ablation(const RunConfig& cfg, const std::vector<CrystalStructure>& records,
                            const std::vector<std::uint64_t>& seeds, std::size_t threads,
                            const std::function<void(const std::string&)>& log) {
  const SplitData split = split_records(records, cfg.train.split);
  if (split.val.empty()) raise(ErrorKind::EmptySplit, "ablation needs a validation split");
  AblationResult result;
  for (std::uint64_t seed : seeds) {
    AblationRun run;
    run.seed = seed;
    for (bool reciprocal : {true, false}) {
      RunConfig c = cfg;
      c.model.reciprocal = reciprocal;
      c.model.seed = seed;
      c.train.seed = seed;
      const auto train_set = prepare_all(split.train, c.model, threads);
      const auto val_set = prepare_all(split.val, c.model, threads);
      const TrainOutcome out = train(c, train_set, val_set);
      const auto model = restore_model(out.best);
      const Evaluation ev = evaluate(*model, val_set, out.best.state.stats, c.train.batch_size);
      const double mae = mean_finite(ev.mae);
      (reciprocal ? run.with_reciprocal : run.without_reciprocal) = mae;
      if (log) {
        std::ostringstream msg;
        msg << "seed " << seed << (reciprocal ? " with" : " without") << " reciprocal: val MAE " << mae;
        log(msg.str());
      }
    }
    result.runs.push_back(run);
  }
  return result;
}

}  // namespace regnet
