#pragma once

#include <map>
#include <string>
#include <vector>

#include "regnet/dataset.hpp"
#include "regnet/model.hpp"
#include "regnet/optim.hpp"

namespace regnet {

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 64;
  AdamWConfig optimizer;
  OneCycleConfig schedule;
  std::uint64_t seed = 0;
  bool standardize = true;  // z-score labels per task on the train split
  bool strict_data = true;
  std::string data;         // JSON-lines dataset
  std::string output_dir = "run";
  SplitSpec split;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Flat "section.key" -> raw value map read from a small TOML subset:
/// [section] headers, key = value lines, # comments, strings in double
/// quotes, booleans, numbers and one-line arrays of strings.
class ConfigDocument {
 public:
  static ConfigDocument parse(const std::string& text, const std::string& origin = "<config>");
  static ConfigDocument from_file(const std::string& path);

  /// "section.key=value" as accepted by --set.
  void set_assignment(const std::string& assignment);
  void set(const std::string& key, const std::string& raw) { values_[key] = raw; }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Applies one key to the config; unknown keys and malformed values raise ConfigError.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& raw);
void apply_document(RunConfig& cfg, const ConfigDocument& doc);

/// Every key with a value that apply_setting reads back to the same config.
std::map<std::string, std::string> config_entries(const RunConfig& cfg);
std::string render_config(const RunConfig& cfg);

/// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace regnet
