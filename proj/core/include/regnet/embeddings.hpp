#pragma once

#include <map>
#include <string>
#include <vector>

#include "regnet/nn.hpp"

namespace regnet {

inline constexpr std::size_t kAtomFeatureDim = 92;

/// Per-element descriptor rows indexed by atomic number.
class AtomFeatureTable {
 public:
  /// One-hot(Z - 1) in `dim` columns; covers Z = 1..dim.
  static AtomFeatureTable one_hot(std::size_t dim = kAtomFeatureDim);
  /// JSON object mapping atomic-number strings to arrays of `dim` reals.
  static AtomFeatureTable from_json_file(const std::string& path);
  static AtomFeatureTable from_json_text(const std::string& text, const std::string& origin = "<memory>");

  std::size_t dim() const { return dim_; }
  bool contains(int z) const { return rows_.count(z) != 0; }
  const std::vector<double>& row(int z) const;
  const std::map<int, std::vector<double>>& rows() const { return rows_; }
  /// JSON text accepted by from_json_text.
  std::string to_json_text() const;

  /// n x dim matrix of rows for the given atomic numbers.
  std::vector<double> lookup(const std::vector<int>& atomic_numbers) const;

 private:
  std::size_t dim_ = 0;
  std::map<int, std::vector<double>> rows_;
};

struct EdgeFeatureConfig {
  double scale_constant = -0.75;
  std::size_t num_centers = 256;
  double center_min = -4.0;
  double center_max = 4.0;
  // Gaussian width; <= 0 means "use the center spacing".
  double rbf_width = 0.0;

  double spacing() const { return (center_max - center_min) / static_cast<double>(num_centers - 1); }
  double width() const { return rbf_width > 0.0 ? rbf_width : spacing(); }
  void validate() const;
};

/// c / d for every distance; throws AtomOverlap for d <= distance_eps.
std::vector<double> scaled_inverse_distance(const std::vector<double>& distances, const EdgeFeatureConfig& cfg,
                                            double distance_eps = 1e-6);

/// Gaussian RBF expansion exp(-(x - mu_k)^2 / (2 w^2)) of each scaled value
/// over the equally spaced centers; returns rows x num_centers.
std::vector<double> rbf_expand(const std::vector<double>& scaled, const EdgeFeatureConfig& cfg);

/// h0_local = linear(table[Z]).
class AtomEmbedding {
 public:
  AtomEmbedding() = default;
  AtomEmbedding(ParameterStore& store, Initializer& init, const std::string& name, std::size_t feature_dim,
                std::size_t hidden);

  DiffValue operator()(const AtomFeatureTable& table, const std::vector<int>& atomic_numbers) const;
  const Linear& projection() const { return proj_; }

 private:
  Linear proj_;
};

/// h0_global = softplus(W_r h0_local + b).
class GlobalInit {
 public:
  GlobalInit() = default;
  GlobalInit(ParameterStore& store, Initializer& init, const std::string& name, std::size_t hidden);

  DiffValue operator()(const DiffValue& h_local) const;
  const Linear& projection() const { return proj_; }

 private:
  std::size_t hidden_ = 0;
  Linear proj_;
};

/// v_e = softplus(linear(rbf(c / d))).
class EdgeEmbedding {
 public:
  EdgeEmbedding() = default;
  EdgeEmbedding(ParameterStore& store, Initializer& init, const std::string& name, EdgeFeatureConfig cfg,
                std::size_t hidden);

  DiffValue operator()(const std::vector<double>& distances) const;
  const EdgeFeatureConfig& config() const { return cfg_; }

 private:
  EdgeFeatureConfig cfg_;
  Linear proj_;
};

}  // namespace regnet
