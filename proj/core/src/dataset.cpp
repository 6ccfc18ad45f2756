#include "regnet/dataset.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "regnet/error.hpp"

namespace regnet {

namespace {

using nlohmann::json;

[[noreturn]] void parse_fail(std::size_t line, const std::string& what) {
  raise(ErrorKind::ParseError, "line " + std::to_string(line) + ": " + what);
}

double number(const json& v, std::size_t line, const char* field) {
  if (!v.is_number()) parse_fail(line, std::string(field) + " must contain numbers");
  return v.get<double>();
}

Vec3 vec3(const json& v, std::size_t line, const char* field) {
  if (!v.is_array() || v.size() != 3) parse_fail(line, std::string(field) + " rows must have 3 entries");
  return {number(v[0], line, field), number(v[1], line, field), number(v[2], line, field)};
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

}  // namespace

CrystalStructure parse_record(const std::string& text, std::size_t line) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    parse_fail(line, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) parse_fail(line, "record must be a JSON object");
  for (const char* key : {"id", "lattice", "frac_coords", "atomic_numbers"}) {
    if (!j.contains(key)) parse_fail(line, std::string("missing field '") + key + "'");
  }
  CrystalStructure s;
  if (!j["id"].is_string()) parse_fail(line, "id must be a string");
  s.id = j["id"].get<std::string>();
  const json& lat = j["lattice"];
  if (!lat.is_array() || lat.size() != 3) parse_fail(line, "lattice must be 3x3");
  for (std::size_t i = 0; i < 3; ++i) s.lattice[i] = vec3(lat[i], line, "lattice");
  if (!j["frac_coords"].is_array()) parse_fail(line, "frac_coords must be an array");
  for (const auto& row : j["frac_coords"]) s.frac_coords.push_back(vec3(row, line, "frac_coords"));
  if (!j["atomic_numbers"].is_array()) parse_fail(line, "atomic_numbers must be an array");
  for (const auto& z : j["atomic_numbers"]) {
    if (!z.is_number_integer()) parse_fail(line, "atomic_numbers must be integers");
    s.atomic_numbers.push_back(z.get<int>());
  }
  if (j.contains("targets")) {
    if (!j["targets"].is_object()) parse_fail(line, "targets must be an object");
    for (const auto& [key, value] : j["targets"].items()) {
      if (value.is_null()) {
        s.labels[key] = std::nullopt;
      } else {
        s.labels[key] = number(value, line, "targets");
      }
    }
  }
  return s;
}

std::string serialize_record(const CrystalStructure& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["lattice"] = json::array();
  for (const auto& row : s.lattice) j["lattice"].push_back({row[0], row[1], row[2]});
  j["frac_coords"] = json::array();
  for (const auto& f : s.frac_coords) j["frac_coords"].push_back({f[0], f[1], f[2]});
  j["atomic_numbers"] = s.atomic_numbers;
  nlohmann::ordered_json targets = nlohmann::ordered_json::object();
  for (const auto& [key, value] : s.labels) {
    if (value) {
      targets[key] = *value;
    } else {
      targets[key] = nullptr;
    }
  }
  j["targets"] = targets;
  return j.dump();
}

LoadResult parse_dataset(std::istream& in, bool strict) {
  LoadResult result;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (blank(line)) continue;
    CrystalStructure s;
    try {
      s = parse_record(line, line_number);
    } catch (const Error& e) {
      if (strict) throw;
      result.issues.push_back({line_number, "", e.what()});
      continue;
    }
    const auto violations = validate_structure(s);
    if (!violations.empty()) {
      std::string message;
      for (const auto& v : violations) {
        if (!message.empty()) message += "; ";
        message += v.field + ": " + v.reason;
      }
      if (strict) raise(ErrorKind::ValidationError, "record '" + s.id + "' (line " + std::to_string(line_number) + "): " + message);
      result.issues.push_back({line_number, s.id, message});
      continue;
    }
    result.records.push_back(std::move(s));
  }
  return result;
}

LoadResult load_dataset(const std::string& path, bool strict) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::IoError, "cannot open dataset '" + path + "'");
  return parse_dataset(in, strict);
}

void write_dataset(const std::string& path, const std::vector<CrystalStructure>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::IoError, "cannot write dataset '" + path + "'");
  for (const auto& s : records) out << serialize_record(s) << '\n';
  if (!out) raise(ErrorKind::IoError, "write failed for '" + path + "'");
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

SplitIndices split_indices(std::size_t n, const SplitSpec& spec) {
  std::size_t ntrain = 0, nval = 0, ntest = 0;
  if (spec.uses_counts()) {
    ntrain = *spec.train_count;
    nval = spec.val_count.value_or(0);
    ntest = spec.test_count.value_or(0);
  } else {
    for (double r : {spec.train_ratio, spec.val_ratio, spec.test_ratio}) {
      if (!(r >= 0.0 && r <= 1.0)) raise(ErrorKind::ConfigError, "split ratios must lie in [0, 1]");
    }
    if (spec.train_ratio + spec.val_ratio + spec.test_ratio > 1.0 + 1e-9) {
      raise(ErrorKind::ConfigError, "split ratios sum to more than 1");
    }
    const auto count = [n](double r) { return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9)); };
    ntrain = count(spec.train_ratio);
    nval = count(spec.val_ratio);
    ntest = count(spec.test_ratio);
  }
  if (ntrain + nval + ntest > n) {
    raise(ErrorKind::ConfigError, "split needs " + std::to_string(ntrain + nval + ntest) + " records, dataset has " +
                                      std::to_string(n));
  }
  const auto order = shuffled_indices(n, spec.seed);
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(ntrain));
  out.val.assign(order.begin() + static_cast<std::ptrdiff_t>(ntrain),
                 order.begin() + static_cast<std::ptrdiff_t>(ntrain + nval));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(ntrain + nval),
                  order.begin() + static_cast<std::ptrdiff_t>(ntrain + nval + ntest));
  return out;
}

}  // namespace regnet
