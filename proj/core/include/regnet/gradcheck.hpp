#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "regnet/nn.hpp"

namespace regnet {

struct NamedValue {
  std::string name;
  DiffValue value;  // must be a leaf; perturbed in place during the check
};

struct GradCheckOptions {
  double eps = 1e-5;
  // Entries sampled per tensor; 0 checks every entry.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct TensorError {
  std::string name;
  double relative_error = 0.0;
  std::size_t entries_checked = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst;
  std::vector<TensorError> tensors;
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences. Per tensor the error is |analytic - numeric| / (|numeric| + 1e-12)
/// taken as Euclidean norms over the checked entries; the result is the
/// maximum over tensors. `f` must rebuild its graph from the current leaf
/// values on every call; two evaluations that disagree bitwise raise
/// NondeterministicFunction.
GradCheckResult grad_check(const std::function<DiffValue()>& f, std::vector<NamedValue> inputs,
                           const GradCheckOptions& opts = {});

/// Every trainable parameter of the store.
std::vector<NamedValue> trainable_inputs(const ParameterStore& store);

}  // namespace regnet
