#include "regnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "regnet/error.hpp"

namespace regnet {

std::vector<NamedValue> trainable_inputs(const ParameterStore& store) {
  std::vector<NamedValue> out;
  for (const auto& p : store.all())
    if (p.trainable) out.push_back({p.name, p.value});
  return out;
}

GradCheckResult grad_check(const std::function<DiffValue()>& f, std::vector<NamedValue> inputs,
                           const GradCheckOptions& opts) {
  for (const auto& in : inputs) {
    if (!in.value.node()->is_leaf || !in.value.requires_grad()) {
      raise(ErrorKind::ConfigError, "grad_check input '" + in.name + "' is not a differentiable leaf");
    }
  }
  double first = 0.0;
  double second = 0.0;
  {
    ad::NoGradGuard guard;
    first = f().item();
    second = f().item();
  }
  if (!(first == second) && !(std::isnan(first) && std::isnan(second))) {
    raise(ErrorKind::NondeterministicFunction, "two evaluations of the checked function differ");
  }

  for (auto& in : inputs) in.value.zero_grad();
  ad::backward(f());

  std::mt19937_64 rng(opts.seed);
  GradCheckResult result;
  for (auto& in : inputs) {
    const std::size_t n = in.value.shape().size();
    std::vector<std::size_t> entries(n);
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (opts.max_entries_per_tensor != 0 && n > opts.max_entries_per_tensor) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(opts.max_entries_per_tensor);
      std::sort(entries.begin(), entries.end());
    }
    std::vector<double> analytic(n, 0.0);
    if (in.value.has_grad()) std::copy(in.value.grad().begin(), in.value.grad().end(), analytic.begin());
    auto data = in.value.mutable_data();
    double diff2 = 0.0;
    double num2 = 0.0;
    ad::NoGradGuard guard;
    for (std::size_t idx : entries) {
      const double saved = data[idx];
      data[idx] = saved + opts.eps;
      const double plus = f().item();
      data[idx] = saved - opts.eps;
      const double minus = f().item();
      data[idx] = saved;
      const double numeric = (plus - minus) / (2.0 * opts.eps);
      diff2 += (analytic[idx] - numeric) * (analytic[idx] - numeric);
      num2 += numeric * numeric;
    }
    const double err = std::sqrt(diff2) / (std::sqrt(num2) + 1e-12);
    result.tensors.push_back({in.name, err, entries.size()});
    if (result.worst.empty() || err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst = in.name;
    }
  }
  return result;
}

}  // namespace regnet
