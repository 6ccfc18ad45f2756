#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "regnet/checkpoint.hpp"
#include "regnet/config.hpp"
#include "regnet/dataset.hpp"
#include "regnet/diagnostics.hpp"
#include "regnet/error.hpp"
#include "regnet/synthetic.hpp"
#include "regnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace regnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  bool float64 = true;
  std::string config;
  std::vector<std::string> overrides;
};

RunConfig build_config(const Globals& g) {
  RunConfig cfg;
  ConfigDocument doc;
  if (!g.config.empty()) doc = ConfigDocument::from_file(g.config);
  for (const auto& o : g.overrides) doc.set_assignment(o);
  apply_document(cfg, doc);
  if (g.seed) {
    cfg.model.seed = *g.seed;
    cfg.train.seed = *g.seed;
    cfg.train.split.seed = *g.seed;
  }
  return cfg;
}

std::string format_values(const std::vector<std::string>& tasks, const std::vector<double>& values) {
  std::ostringstream out;
  out << std::setprecision(6);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    out << (t ? " " : "") << tasks[t] << "=";
    if (std::isfinite(values[t])) {
      out << values[t];
    } else {
      out << "n/a";
    }
  }
  return out.str();
}

nlohmann::ordered_json per_task_json(const std::vector<std::string>& tasks, const std::vector<double>& values) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (std::isfinite(values[t])) {
      j[tasks[t]] = values[t];
    } else {
      j[tasks[t]] = nullptr;
    }
  }
  return j;
}

std::vector<CrystalStructure> select_split(const std::vector<CrystalStructure>& records, const SplitSpec& spec,
                                           const std::string& which) {
  if (which == "all") return records;
  SplitData s = split_records(records, spec);
  if (which == "train") return s.train;
  if (which == "val") return s.val;
  if (which == "test") return s.test;
  raise(ErrorKind::ConfigError, "unknown split '" + which + "' (expected all, train, val or test)");
}

int cmd_train(const Globals& g, const std::string& data, const std::string& out_dir, std::optional<std::size_t> epochs,
              const std::string& resume) {
  RunConfig cfg = build_config(g);
  std::optional<Checkpoint> ckpt;
  if (!resume.empty()) {
    ckpt = load_checkpoint(resume);
    cfg = ckpt->config;
  }
  if (!data.empty()) cfg.train.data = data;
  if (!out_dir.empty()) cfg.train.output_dir = out_dir;
  if (epochs) cfg.train.epochs = *epochs;
  if (ckpt) ckpt->config = cfg;
  if (cfg.train.data.empty()) raise(ErrorKind::ConfigError, "no dataset given (--data or train.data)");
  cfg.model.validate();

  const LoadResult loaded = load_dataset(cfg.train.data, cfg.train.strict_data);
  for (const auto& issue : loaded.issues)
    std::cerr << "skipped line " << issue.line << (issue.id.empty() ? "" : " (" + issue.id + ")") << ": " << issue.message << "\n";
  const SplitData split = split_records(loaded.records, cfg.train.split);
  std::cout << "records " << loaded.records.size() << ": train " << split.train.size() << ", val " << split.val.size()
            << ", test " << split.test.size() << "\n";
  const auto train_set = prepare_all(split.train, cfg.model, g.threads);
  const auto val_set = prepare_all(split.val, cfg.model, g.threads);

  fs::create_directories(cfg.train.output_dir);
  {
    std::ofstream conf(fs::path(cfg.train.output_dir) / "config.toml");
    conf << render_config(cfg);
  }
  TrainOptions opts;
  opts.output_dir = cfg.train.output_dir;
  const auto& tasks = cfg.model.tasks;
  opts.on_metric = [&](const MetricRecord& m) {
    std::cout << "epoch " << m.epoch << " " << std::left << std::setw(5) << m.split << " mae " << format_values(tasks, m.mae);
    if (m.split == "train") std::cout << " loss " << m.loss << " lr " << m.lr;
    std::cout << std::endl;
  };
  const TrainOutcome out = train(cfg, train_set, val_set, opts, ckpt ? &*ckpt : nullptr);
  std::cout << "best epoch " << out.best.state.best_epoch << ", checkpoints in " << cfg.train.output_dir << "\n";
  if (!split.test.empty()) {
    const auto test_set = prepare_all(split.test, cfg.model, g.threads);
    const auto model = restore_model(out.best);
    const Evaluation ev = evaluate(*model, test_set, out.best.state.stats, cfg.train.batch_size);
    std::cout << "test mae " << format_values(tasks, ev.mae) << "\n";
  }
  return kExitOk;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& data, const std::string& which) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const auto model = restore_model(ckpt);
  const std::string path = data.empty() ? ckpt.config.train.data : data;
  const LoadResult loaded = load_dataset(path, ckpt.config.train.strict_data);
  const auto records = select_split(loaded.records, ckpt.config.train.split, which);
  if (records.empty()) raise(ErrorKind::EmptySplit, "split '" + which + "' is empty");
  const auto prepared = prepare_all(records, model->config(), g.threads);
  const Evaluation ev = evaluate(*model, prepared, ckpt.state.stats, ckpt.config.train.batch_size);
  nlohmann::ordered_json j;
  j["split"] = which;
  j["structures"] = records.size();
  j["mae"] = per_task_json(model->config().tasks, ev.mae);
  j["labels"] = nlohmann::ordered_json::object();
  for (std::size_t t = 0; t < ev.count.size(); ++t) j["labels"][model->config().tasks[t]] = ev.count[t];
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_predict(const Globals& g, const std::string& checkpoint, const std::string& structure) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const auto model = restore_model(ckpt);
  const LoadResult loaded = load_dataset(structure, true);
  if (loaded.records.empty()) raise(ErrorKind::EmptySplit, "no structure found in '" + structure + "'");
  const auto prepared = prepare_all(loaded.records, model->config(), g.threads);
  const Evaluation ev = evaluate(*model, prepared, ckpt.state.stats, ckpt.config.train.batch_size);
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    nlohmann::ordered_json j;
    j["id"] = prepared[i].id;
    j["predictions"] = per_task_json(model->config().tasks, ev.predictions[i]);
    std::cout << j.dump() << "\n";
  }
  return kExitOk;
}

int cmd_inspect(const Globals& g, const std::string& checkpoint, const std::string& data, const std::string& which,
                const std::string& mode, const std::string& json_out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const auto model = restore_model(ckpt);
  const std::string path = data.empty() ? ckpt.config.train.data : data;
  const LoadResult loaded = load_dataset(path, ckpt.config.train.strict_data);
  const auto records = select_split(loaded.records, ckpt.config.train.split, which);
  const auto prepared = prepare_all(records, model->config(), g.threads);
  const UsageMode m = mode == "top1" ? UsageMode::TopOneIndicator : UsageMode::GateWeights;
  const ExpertUsage usage = compute_expert_usage(*model, prepared, m, ckpt.config.train.batch_size);
  std::ofstream out(json_out);
  if (!out) raise(ErrorKind::IoError, "cannot write '" + json_out + "'");
  out << expert_usage_json(usage) << "\n";
  std::cout << expert_usage_table(usage) << "report written to " << json_out << "\n";
  return kExitOk;
}

int cmd_validate(const std::string& data, const std::vector<std::string>& tasks) {
  const LoadResult loaded = load_dataset(data, false);
  std::size_t violations = loaded.issues.size();
  for (const auto& issue : loaded.issues)
    std::cout << "line " << issue.line << (issue.id.empty() ? "" : " (" + issue.id + ")") << ": " << issue.message << "\n";
  if (!tasks.empty()) {
    for (const auto& s : loaded.records)
      for (const auto& [name, value] : s.labels)
        if (std::find(tasks.begin(), tasks.end(), name) == tasks.end()) {
          std::cout << s.id << ": target '" << name << "' is not a configured task\n";
          ++violations;
        }
  }
  std::cout << loaded.records.size() << " valid records, " << violations << " violations\n";
  return violations == 0 ? kExitOk : kExitValidation;
}

int cmd_gradcheck(const Globals& g, std::size_t hidden) {
  GradSuiteOptions opts;
  opts.seed = g.seed.value_or(0);
  opts.hidden = hidden;
  const auto reports = run_gradcheck_suite(opts);
  bool ok = true;
  for (const auto& r : reports) {
    std::cout << std::left << std::setw(34) << r.module << std::scientific << std::setprecision(3)
              << r.result.max_relative_error << "  (< " << r.threshold << ")  " << (r.passed() ? "PASS" : "FAIL");
    if (!r.passed()) std::cout << "  worst: " << r.result.worst;
    std::cout << "\n";
    ok = ok && r.passed();
  }
  return ok ? kExitOk : kExitValidation;
}

int cmd_ablate(const Globals& g, const std::string& data, std::size_t seeds, const std::string& json_out) {
  RunConfig cfg = build_config(g);
  if (!data.empty()) cfg.train.data = data;
  if (cfg.train.data.empty()) raise(ErrorKind::ConfigError, "no dataset given (--data or train.data)");
  const LoadResult loaded = load_dataset(cfg.train.data, cfg.train.strict_data);
  std::vector<std::uint64_t> seed_list;
  for (std::size_t i = 0; i < seeds; ++i) seed_list.push_back(cfg.train.seed + i);
  const AblationResult res =
      run_ablation(cfg, loaded.records, seed_list, g.threads, [](const std::string& line) { std::cout << line << std::endl; });
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : res.runs)
    j.push_back({{"seed", r.seed}, {"with_reciprocal", r.with_reciprocal}, {"without_reciprocal", r.without_reciprocal}});
  if (!json_out.empty()) std::ofstream(json_out) << j.dump(2) << "\n";
  std::cout << "reciprocal block lowers validation MAE in " << res.reciprocal_wins() << " of " << res.runs.size()
            << " seeds\n";
  return kExitOk;
}

int cmd_synth(const Globals& g, SyntheticOptions opts, const std::string& output) {
  if (g.seed) opts.seed = *g.seed;
  write_dataset(output, synthetic_dataset(opts));
  std::cout << "wrote " << opts.count << " structures to " << output << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"regnet: crystal property prediction with reciprocal-space message passing"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for initialization, shuffling, splits and gate noise");
  app.add_option("--threads", g.threads, "Worker threads for data preparation")->check(CLI::PositiveNumber);
  app.add_flag("--float64", g.float64, "Use 64-bit floats (always on)");
  app.add_option("--config", g.config, "TOML-style config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Override a config key, e.g. --set model.hidden=64");

  std::string data, out_dir, resume, checkpoint, split = "all", mode = "weights", json_out, output, structure;
  std::optional<std::size_t> epochs;
  std::vector<std::string> tasks;
  std::size_t hidden = 8;
  std::size_t seeds = 3;
  SyntheticOptions synth;

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--data", data, "JSON-lines dataset");
  train->add_option("--output-dir", out_dir, "Directory for checkpoints and metrics");
  train->add_option("--epochs", epochs, "Override train.epochs");
  train->add_option("--resume", resume, "Resume from a checkpoint")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Per-task MAE of a checkpoint");
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "Dataset (defaults to the one used for training)");
  eval->add_option("--split", split, "all, train, val or test");

  auto* predict = app.add_subcommand("predict", "Predict properties for the structures in a file");
  predict->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  predict->add_option("--structure", structure, "JSON-lines file with one or more structures")
      ->required()
      ->check(CLI::ExistingFile);

  auto* inspect = app.add_subcommand("inspect-experts", "Expert selection frequencies and task similarity");
  inspect->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  inspect->add_option("--data", data, "Dataset (defaults to the one used for training)");
  inspect->add_option("--split", split, "all, train, val or test");
  inspect->add_option("--mode", mode, "weights or top1")->check(CLI::IsMember({"weights", "top1"}));
  inspect->add_option("--json", json_out, "Report path")->default_val("expert_usage.json");

  auto* validate = app.add_subcommand("validate-data", "Check a dataset file");
  validate->add_option("--data", data)->required()->check(CLI::ExistingFile);
  validate->add_option("--tasks", tasks, "Allowed target names")->delimiter(',');

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks per module");
  gradcheck->add_option("--hidden", hidden, "Hidden width used by the checks")->check(CLI::PositiveNumber);

  auto* ablate = app.add_subcommand("ablate", "Paired runs with and without the reciprocal block");
  ablate->add_option("--data", data, "JSON-lines dataset");
  ablate->add_option("--seeds", seeds, "Number of seeds")->check(CLI::PositiveNumber);
  ablate->add_option("--json", json_out, "Write per-seed results here");

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic dataset");
  synth_cmd->add_option("--output", output)->required();
  synth_cmd->add_option("--count", synth.count);
  synth_cmd->add_option("--max-atoms", synth.max_atoms);
  synth_cmd->add_option("--tasks", synth.tasks)->delimiter(',');
  synth_cmd->add_option("--missing", synth.missing_fraction, "Probability of dropping a non-primary label");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitRuntime;
  }

  try {
    if (*train) return cmd_train(g, data, out_dir, epochs, resume);
    if (*eval) return cmd_eval(g, checkpoint, data, split);
    if (*predict) return cmd_predict(g, checkpoint, structure);
    if (*inspect) return cmd_inspect(g, checkpoint, data, split, mode, json_out);
    if (*validate) return cmd_validate(data, tasks);
    if (*gradcheck) return cmd_gradcheck(g, hidden);
    if (*ablate) return cmd_ablate(g, data, seeds, json_out);
    if (*synth_cmd) return cmd_synth(g, synth, output);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::ValidationError ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
