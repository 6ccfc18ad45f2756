#include "regnet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "regnet/error.hpp"

namespace regnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Drops a trailing # comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& raw, const char* expected) {
  raise(ErrorKind::ConfigError, "'" + key + "' expects " + expected + ", got '" + raw + "'");
}

std::string unquote(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.size() < 2 || s.front() != '"' || s.back() != '"') return s;
  std::string out;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) {
    if (s[i] == '\\' && i + 2 < s.size()) ++i;
    out += s[i];
  }
  return out;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

bool as_bool(const std::string& key, const std::string& raw) {
  const std::string s = unquote(raw);
  if (s == "true") return true;
  if (s == "false") return false;
  bad_value(key, raw, "true or false");
}

template <typename T>
T as_integer(const std::string& key, const std::string& raw) {
  const std::string s = unquote(raw);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) bad_value(key, raw, "an integer");
  return v;
}

double as_double(const std::string& key, const std::string& raw) {
  const std::string s = unquote(raw);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) bad_value(key, raw, "a number");
  return v;
}

std::vector<std::string> as_list(const std::string& key, const std::string& raw) {
  std::string s = trim(raw);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') bad_value(key, raw, "a one-line array");
    s = s.substr(1, s.size() - 2);
  }
  std::vector<std::string> out;
  std::string item;
  bool quoted = false;
  for (char c : s) {
    if (c == '"') quoted = !quoted;
    if (c == ',' && !quoted) {
      out.push_back(unquote(item));
      item.clear();
    } else {
      item += c;
    }
  }
  if (!trim(item).empty()) out.push_back(unquote(item));
  for (const auto& v : out)
    if (v.empty()) bad_value(key, raw, "non-empty names");
  return out;
}

std::string render_list(const std::vector<std::string>& items) {
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + quote(items[i]);
  return out + "]";
}

std::string render_bool(bool b) { return b ? "true" : "false"; }

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& raw)>;

#define REGNET_SIZE(field) [](RunConfig& c, const std::string& k, const std::string& r) { c.field = as_integer<std::size_t>(k, r); }
#define REGNET_INT(field) [](RunConfig& c, const std::string& k, const std::string& r) { c.field = as_integer<int>(k, r); }
#define REGNET_U64(field) [](RunConfig& c, const std::string& k, const std::string& r) { c.field = as_integer<std::uint64_t>(k, r); }
#define REGNET_REAL(field) [](RunConfig& c, const std::string& k, const std::string& r) { c.field = as_double(k, r); }
#define REGNET_BOOL(field) [](RunConfig& c, const std::string& k, const std::string& r) { c.field = as_bool(k, r); }
#define REGNET_STR(field) [](RunConfig& c, const std::string&, const std::string& r) { c.field = unquote(r); }

MoeConfig& moe_of(RunConfig& c) {
  if (!c.model.moe) c.model.moe = MoeConfig{};
  return *c.model.moe;
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"model.num_blocks", REGNET_SIZE(model.num_blocks)},
      {"model.hidden", REGNET_SIZE(model.hidden)},
      {"model.k_neighbors", REGNET_INT(model.k_neighbors)},
      {"model.radius_scale", REGNET_REAL(model.radius_scale)},
      {"model.kmax", REGNET_INT(model.kmax)},
      {"model.include_zero_frequency", REGNET_BOOL(model.include_zero_frequency)},
      {"model.reciprocal", REGNET_BOOL(model.reciprocal)},
      {"model.filter_mode",
       [](RunConfig& c, const std::string& k, const std::string& r) {
         const std::string v = unquote(r);
         if (v == "mlp") c.model.filter_mode = FilterMode::ContinuousMlp;
         else if (v == "table") c.model.filter_mode = FilterMode::PerIndexTable;
         else bad_value(k, r, "\"mlp\" or \"table\"");
       }},
      {"model.filter_hidden", REGNET_SIZE(model.filter_hidden)},
      {"model.filter_init_scale", REGNET_REAL(model.filter_init_scale)},
      {"model.fusion",
       [](RunConfig& c, const std::string& k, const std::string& r) {
         const std::string v = unquote(r);
         if (v == "merge") c.model.fusion = Fusion::MergeEveryBlock;
         else if (v == "separate") c.model.fusion = Fusion::SeparateStreams;
         else bad_value(k, r, "\"merge\" or \"separate\"");
       }},
      {"model.aggregation",
       [](RunConfig& c, const std::string& k, const std::string& r) {
         const std::string v = unquote(r);
         if (v == "sum") c.model.aggregation = Aggregation::Sum;
         else if (v == "mean") c.model.aggregation = Aggregation::Mean;
         else bad_value(k, r, "\"sum\" or \"mean\"");
       }},
      {"model.head_hidden", REGNET_SIZE(model.head_hidden)},
      {"model.tasks", [](RunConfig& c, const std::string& k, const std::string& r) { c.model.tasks = as_list(k, r); }},
      {"model.seed", REGNET_U64(model.seed)},
      {"model.atom_features", REGNET_STR(model.atom_features)},
      {"edge.scale_constant", REGNET_REAL(model.edge.scale_constant)},
      {"edge.num_centers", REGNET_SIZE(model.edge.num_centers)},
      {"edge.center_min", REGNET_REAL(model.edge.center_min)},
      {"edge.center_max", REGNET_REAL(model.edge.center_max)},
      {"edge.rbf_width", REGNET_REAL(model.edge.rbf_width)},
      {"moe.enabled",
       [](RunConfig& c, const std::string& k, const std::string& r) {
         if (as_bool(k, r)) moe_of(c);
         else c.model.moe.reset();
       }},
      {"moe.num_experts", [](RunConfig& c, const std::string& k, const std::string& r) { moe_of(c).gate.num_experts = as_integer<std::size_t>(k, r); }},
      {"moe.top_k", [](RunConfig& c, const std::string& k, const std::string& r) { moe_of(c).gate.top_k = as_integer<std::size_t>(k, r); }},
      {"moe.noise", [](RunConfig& c, const std::string& k, const std::string& r) { moe_of(c).gate.noise_enabled = as_bool(k, r); }},
      {"moe.renormalize", [](RunConfig& c, const std::string& k, const std::string& r) { moe_of(c).gate.renormalize = as_bool(k, r); }},
      {"moe.importance_weight", [](RunConfig& c, const std::string& k, const std::string& r) { moe_of(c).importance_weight = as_double(k, r); }},
      {"moe.per_task_gates", [](RunConfig& c, const std::string& k, const std::string& r) { moe_of(c).per_task_gates = as_bool(k, r); }},
      {"train.epochs", REGNET_SIZE(train.epochs)},
      {"train.batch_size", REGNET_SIZE(train.batch_size)},
      {"train.max_lr", REGNET_REAL(train.schedule.max_lr)},
      {"train.pct_start", REGNET_REAL(train.schedule.pct_start)},
      {"train.div_factor", REGNET_REAL(train.schedule.div_factor)},
      {"train.final_div", REGNET_REAL(train.schedule.final_div)},
      {"train.weight_decay", REGNET_REAL(train.optimizer.weight_decay)},
      {"train.beta1", REGNET_REAL(train.optimizer.beta1)},
      {"train.beta2", REGNET_REAL(train.optimizer.beta2)},
      {"train.eps", REGNET_REAL(train.optimizer.eps)},
      {"train.seed", REGNET_U64(train.seed)},
      {"train.standardize", REGNET_BOOL(train.standardize)},
      {"train.strict_data", REGNET_BOOL(train.strict_data)},
      {"train.data", REGNET_STR(train.data)},
      {"train.output_dir", REGNET_STR(train.output_dir)},
      {"split.train_ratio", REGNET_REAL(train.split.train_ratio)},
      {"split.val_ratio", REGNET_REAL(train.split.val_ratio)},
      {"split.test_ratio", REGNET_REAL(train.split.test_ratio)},
      {"split.train_count", [](RunConfig& c, const std::string& k, const std::string& r) { c.train.split.train_count = as_integer<std::size_t>(k, r); }},
      {"split.val_count", [](RunConfig& c, const std::string& k, const std::string& r) { c.train.split.val_count = as_integer<std::size_t>(k, r); }},
      {"split.test_count", [](RunConfig& c, const std::string& k, const std::string& r) { c.train.split.test_count = as_integer<std::size_t>(k, r); }},
      {"split.seed", REGNET_U64(train.split.seed)},
  };
  return table;
}

#undef REGNET_SIZE
#undef REGNET_INT
#undef REGNET_U64
#undef REGNET_REAL
#undef REGNET_BOOL
#undef REGNET_STR

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, ptr);
  // Keep a decimal marker so the value reads back as a real.
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

ConfigDocument ConfigDocument::parse(const std::string& text, const std::string& origin) {
  ConfigDocument doc;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    const std::string where = origin + ":" + std::to_string(number);
    if (s.front() == '[') {
      if (s.back() != ']') raise(ErrorKind::ConfigError, where + ": malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) raise(ErrorKind::ConfigError, where + ": expected key = value");
    const std::string key = trim(s.substr(0, eq));
    if (key.empty()) raise(ErrorKind::ConfigError, where + ": empty key");
    doc.values_[section.empty() ? key : section + "." + key] = trim(s.substr(eq + 1));
  }
  return doc;
}

ConfigDocument ConfigDocument::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::IoError, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void ConfigDocument::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || trim(assignment.substr(0, eq)).empty()) {
    raise(ErrorKind::ConfigError, "override '" + assignment + "' must look like section.key=value");
  }
  values_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& raw) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) raise(ErrorKind::ConfigError, "unknown config key '" + key + "'");
  it->second(cfg, key, raw);
}

void apply_document(RunConfig& cfg, const ConfigDocument& doc) {
  // moe.enabled first so that "enabled = false" is not undone by other moe keys.
  const auto& values = doc.values();
  for (const auto& [key, raw] : values)
    if (key != "moe.enabled") apply_setting(cfg, key, raw);
  if (const auto it = values.find("moe.enabled"); it != values.end()) apply_setting(cfg, it->first, it->second);
}

std::map<std::string, std::string> config_entries(const RunConfig& cfg) {
  const ModelConfig& m = cfg.model;
  const TrainConfig& t = cfg.train;
  std::map<std::string, std::string> e;
  e["model.num_blocks"] = std::to_string(m.num_blocks);
  e["model.hidden"] = std::to_string(m.hidden);
  e["model.k_neighbors"] = std::to_string(m.k_neighbors);
  e["model.radius_scale"] = format_double(m.radius_scale);
  e["model.kmax"] = std::to_string(m.kmax);
  e["model.include_zero_frequency"] = render_bool(m.include_zero_frequency);
  e["model.reciprocal"] = render_bool(m.reciprocal);
  e["model.filter_mode"] = quote(m.filter_mode == FilterMode::ContinuousMlp ? "mlp" : "table");
  e["model.filter_hidden"] = std::to_string(m.filter_hidden);
  e["model.filter_init_scale"] = format_double(m.filter_init_scale);
  e["model.fusion"] = quote(m.fusion == Fusion::MergeEveryBlock ? "merge" : "separate");
  e["model.aggregation"] = quote(m.aggregation == Aggregation::Sum ? "sum" : "mean");
  e["model.head_hidden"] = std::to_string(m.head_hidden);
  e["model.tasks"] = render_list(m.tasks);
  e["model.seed"] = std::to_string(m.seed);
  e["model.atom_features"] = quote(m.atom_features);
  e["edge.scale_constant"] = format_double(m.edge.scale_constant);
  e["edge.num_centers"] = std::to_string(m.edge.num_centers);
  e["edge.center_min"] = format_double(m.edge.center_min);
  e["edge.center_max"] = format_double(m.edge.center_max);
  e["edge.rbf_width"] = format_double(m.edge.rbf_width);
  e["moe.enabled"] = render_bool(m.moe.has_value());
  if (m.moe) {
    e["moe.num_experts"] = std::to_string(m.moe->gate.num_experts);
    e["moe.top_k"] = std::to_string(m.moe->gate.top_k);
    e["moe.noise"] = render_bool(m.moe->gate.noise_enabled);
    e["moe.renormalize"] = render_bool(m.moe->gate.renormalize);
    e["moe.importance_weight"] = format_double(m.moe->importance_weight);
    e["moe.per_task_gates"] = render_bool(m.moe->per_task_gates);
  }
  e["train.epochs"] = std::to_string(t.epochs);
  e["train.batch_size"] = std::to_string(t.batch_size);
  e["train.max_lr"] = format_double(t.schedule.max_lr);
  e["train.pct_start"] = format_double(t.schedule.pct_start);
  e["train.div_factor"] = format_double(t.schedule.div_factor);
  e["train.final_div"] = format_double(t.schedule.final_div);
  e["train.weight_decay"] = format_double(t.optimizer.weight_decay);
  e["train.beta1"] = format_double(t.optimizer.beta1);
  e["train.beta2"] = format_double(t.optimizer.beta2);
  e["train.eps"] = format_double(t.optimizer.eps);
  e["train.seed"] = std::to_string(t.seed);
  e["train.standardize"] = render_bool(t.standardize);
  e["train.strict_data"] = render_bool(t.strict_data);
  e["train.data"] = quote(t.data);
  e["train.output_dir"] = quote(t.output_dir);
  e["split.train_ratio"] = format_double(t.split.train_ratio);
  e["split.val_ratio"] = format_double(t.split.val_ratio);
  e["split.test_ratio"] = format_double(t.split.test_ratio);
  if (t.split.train_count) e["split.train_count"] = std::to_string(*t.split.train_count);
  if (t.split.val_count) e["split.val_count"] = std::to_string(*t.split.val_count);
  if (t.split.test_count) e["split.test_count"] = std::to_string(*t.split.test_count);
  e["split.seed"] = std::to_string(t.split.seed);
  return e;
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& [key, value] : config_entries(cfg)) {
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      out << (section.empty() ? "" : "\n") << "[" << s << "]\n";
      section = s;
    }
    out << key.substr(dot + 1) << " = " << value << "\n";
  }
  return out.str();
}

}  // namespace regnet
