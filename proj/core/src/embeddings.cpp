#include "regnet/embeddings.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "regnet/error.hpp"

namespace regnet {

AtomFeatureTable AtomFeatureTable::one_hot(std::size_t dim) {
  AtomFeatureTable t;
  t.dim_ = dim;
  for (std::size_t z = 1; z <= dim; ++z) {
    std::vector<double> row(dim, 0.0);
    row[z - 1] = 1.0;
    t.rows_.emplace(static_cast<int>(z), std::move(row));
  }
  return t;
}

AtomFeatureTable AtomFeatureTable::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::IoError, "cannot open atom feature table '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str(), path);
}

std::string AtomFeatureTable::to_json_text() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [z, row] : rows_) j[std::to_string(z)] = row;
  return j.dump();
}

AtomFeatureTable AtomFeatureTable::from_json_text(const std::string& text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::ParseError, origin + ": " + e.what());
  }
  if (!j.is_object() || j.empty()) raise(ErrorKind::ParseError, origin + ": expected a non-empty JSON object");
  AtomFeatureTable t;
  for (const auto& [key, value] : j.items()) {
    int z = 0;
    try {
      std::size_t used = 0;
      z = std::stoi(key, &used);
      if (used != key.size()) throw std::invalid_argument(key);
    } catch (const std::exception&) {
      raise(ErrorKind::ParseError, origin + ": key '" + key + "' is not an atomic number");
    }
    if (z <= 0) raise(ErrorKind::ParseError, origin + ": atomic number " + key + " must be positive");
    if (!value.is_array()) raise(ErrorKind::ParseError, origin + ": row " + key + " is not an array");
    std::vector<double> row;
    for (const auto& x : value) {
      if (!x.is_number() || !std::isfinite(x.get<double>())) {
        raise(ErrorKind::ParseError, origin + ": row " + key + " has a non-finite entry");
      }
      row.push_back(x.get<double>());
    }
    if (t.dim_ == 0) t.dim_ = row.size();
    if (row.size() != t.dim_ || row.empty()) {
      raise(ErrorKind::ParseError, origin + ": row " + key + " has inconsistent length");
    }
    t.rows_.emplace(z, std::move(row));
  }
  return t;
}

const std::vector<double>& AtomFeatureTable::row(int z) const {
  const auto it = rows_.find(z);
  if (it == rows_.end()) raise(ErrorKind::UnknownElement, "no atom features for Z = " + std::to_string(z));
  return it->second;
}

std::vector<double> AtomFeatureTable::lookup(const std::vector<int>& atomic_numbers) const {
  std::vector<double> out;
  out.reserve(atomic_numbers.size() * dim_);
  for (int z : atomic_numbers) {
    const auto& r = row(z);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

void EdgeFeatureConfig::validate() const {
  if (!(center_min < center_max)) raise(ErrorKind::ConfigError, "rbf center_min must be < center_max");
  if (num_centers < 2) raise(ErrorKind::ConfigError, "rbf num_centers must be >= 2");
}

std::vector<double> scaled_inverse_distance(const std::vector<double>& distances, const EdgeFeatureConfig& cfg,
                                            double distance_eps) {
  std::vector<double> out(distances.size());
  for (std::size_t i = 0; i < distances.size(); ++i) {
    if (!(distances[i] > distance_eps)) {
      raise(ErrorKind::AtomOverlap, "edge distance " + std::to_string(distances[i]) + " is not positive");
    }
    out[i] = cfg.scale_constant / distances[i];
  }
  return out;
}

std::vector<double> rbf_expand(const std::vector<double>& scaled, const EdgeFeatureConfig& cfg) {
  cfg.validate();
  const std::size_t k = cfg.num_centers;
  const double step = cfg.spacing();
  const double inv_two_w2 = 1.0 / (2.0 * cfg.width() * cfg.width());
  std::vector<double> out(scaled.size() * k);
  for (std::size_t i = 0; i < scaled.size(); ++i)
    for (std::size_t c = 0; c < k; ++c) {
      const double d = scaled[i] - (cfg.center_min + step * static_cast<double>(c));
      out[i * k + c] = std::exp(-d * d * inv_two_w2);
    }
  return out;
}

AtomEmbedding::AtomEmbedding(ParameterStore& store, Initializer& init, const std::string& name,
                             std::size_t feature_dim, std::size_t hidden)
    : proj_(store, init, name, feature_dim, hidden) {}

DiffValue AtomEmbedding::operator()(const AtomFeatureTable& table, const std::vector<int>& atomic_numbers) const {
  if (table.dim() != proj_.weight().rows()) {
    raise(ErrorKind::ShapeError, "atom feature table width does not match the embedding");
  }
  auto feats = DiffValue::constant({atomic_numbers.size(), table.dim()}, table.lookup(atomic_numbers));
  return proj_(feats);
}

GlobalInit::GlobalInit(ParameterStore& store, Initializer& init, const std::string& name, std::size_t hidden)
    : hidden_(hidden), proj_(store, init, name, hidden, hidden) {}

DiffValue GlobalInit::operator()(const DiffValue& h_local) const {
  if (h_local.cols() != hidden_) {
    raise(ErrorKind::ShapeError, "init_global expects width " + std::to_string(hidden_) + ", got " +
                                     std::to_string(h_local.cols()));
  }
  return ad::softplus(proj_(h_local));
}

EdgeEmbedding::EdgeEmbedding(ParameterStore& store, Initializer& init, const std::string& name,
                             EdgeFeatureConfig cfg, std::size_t hidden)
    : cfg_(cfg), proj_(store, init, name, cfg.num_centers, hidden) {
  cfg_.validate();
}

DiffValue EdgeEmbedding::operator()(const std::vector<double>& distances) const {
  auto rbf = rbf_expand(scaled_inverse_distance(distances, cfg_), cfg_);
  return ad::softplus(proj_(DiffValue::constant({distances.size(), cfg_.num_centers}, std::move(rbf))));
}

}  // namespace regnet
