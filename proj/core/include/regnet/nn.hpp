#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "regnet/autodiff.hpp"

namespace regnet {

using ad::DiffValue;
using ad::Shape;

struct Parameter {
  std::string name;
  DiffValue value;
  bool trainable = true;
};

/// Owns every named array of a model: trainable weights and non-trainable
/// buffers (batch-norm running statistics). Registration order is stable and
/// defines checkpoint layout.
class ParameterStore {
 public:
  DiffValue add(const std::string& name, Shape shape, std::vector<double> init, bool trainable = true);

  const std::vector<Parameter>& all() const { return params_; }
  std::vector<Parameter>& all() { return params_; }
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t trainable_count() const;

  void zero_grad();

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Deterministic weight initializer (fan-in scaled uniform).
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  std::vector<double> uniform(std::size_t count, double bound);
  std::vector<double> fan_in_uniform(std::size_t fan_in, std::size_t count) {
    return uniform(count, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  }

 private:
  std::mt19937_64 rng_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, Initializer& init, const std::string& name, std::size_t in,
         std::size_t out, double weight_scale = 1.0);

  DiffValue operator()(const DiffValue& x) const { return ad::linear(x, weight_, bias_); }

  const DiffValue& weight() const { return weight_; }
  const DiffValue& bias() const { return bias_; }

 private:
  DiffValue weight_;
  DiffValue bias_;
};

/// in -> hidden -> out with SiLU between the two affine maps.
class Mlp2 {
 public:
  Mlp2() = default;
  Mlp2(ParameterStore& store, Initializer& init, const std::string& name, std::size_t in,
       std::size_t hidden, std::size_t out, double output_scale = 1.0);

  DiffValue operator()(const DiffValue& x) const { return fc2_(ad::silu(fc1_(x))); }

  const Linear& fc1() const { return fc1_; }
  const Linear& fc2() const { return fc2_; }

 private:
  Linear fc1_;
  Linear fc2_;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParameterStore& store, const std::string& name, std::size_t features,
            ad::BatchNormOptions opts = {});

  DiffValue operator()(const DiffValue& x, bool training) const;

 private:
  DiffValue gamma_;
  DiffValue beta_;
  DiffValue running_mean_;
  DiffValue running_var_;
  ad::BatchNormOptions opts_;
};

}  // namespace regnet
