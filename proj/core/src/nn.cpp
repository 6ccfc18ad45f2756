#include "regnet/nn.hpp"

#include <algorithm>
#include <cmath>

#include "regnet/error.hpp"

namespace regnet {

DiffValue ParameterStore::add(const std::string& name, Shape shape, std::vector<double> init, bool trainable) {
  if (index_.count(name)) raise(ErrorKind::ConfigError, "duplicate parameter name '" + name + "'");
  DiffValue v = DiffValue::leaf(shape, std::move(init), trainable);
  index_.emplace(name, params_.size());
  params_.push_back({name, v, trainable});
  return v;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) raise(ErrorKind::IndexError, "unknown parameter '" + name + "'");
  return params_[it->second];
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += p.value.shape().size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_)
    if (p.trainable) p.value.zero_grad();
}

std::vector<double> Initializer::uniform(std::size_t count, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> out(count);
  for (double& v : out) v = dist(rng_);
  return out;
}

Linear::Linear(ParameterStore& store, Initializer& init, const std::string& name, std::size_t in,
               std::size_t out, double weight_scale) {
  auto w = init.fan_in_uniform(in, in * out);
  auto b = init.fan_in_uniform(in, out);
  if (weight_scale != 1.0) {
    for (double& v : w) v *= weight_scale;
    for (double& v : b) v *= weight_scale;
  }
  weight_ = store.add(name + ".weight", {in, out}, std::move(w));
  bias_ = store.add(name + ".bias", {1, out}, std::move(b));
}

Mlp2::Mlp2(ParameterStore& store, Initializer& init, const std::string& name, std::size_t in,
           std::size_t hidden, std::size_t out, double output_scale)
    : fc1_(store, init, name + ".fc1", in, hidden),
      fc2_(store, init, name + ".fc2", hidden, out, output_scale) {}

BatchNorm::BatchNorm(ParameterStore& store, const std::string& name, std::size_t features,
                     ad::BatchNormOptions opts)
    : opts_(opts) {
  gamma_ = store.add(name + ".gamma", {1, features}, std::vector<double>(features, 1.0));
  beta_ = store.add(name + ".beta", {1, features}, std::vector<double>(features, 0.0));
  running_mean_ = store.add(name + ".running_mean", {1, features}, std::vector<double>(features, 0.0), false);
  running_var_ = store.add(name + ".running_var", {1, features}, std::vector<double>(features, 1.0), false);
}

DiffValue BatchNorm::operator()(const DiffValue& x, bool training) const {
  // The buffers are leaves owned by the store; mutating them in place is the
  // running-statistics update.
  DiffValue rm = running_mean_;
  DiffValue rv = running_var_;
  return ad::batch_norm(x, gamma_, beta_, rm.mutable_data(), rv.mutable_data(), opts_, training);
}

}  // namespace regnet
