#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "regnet/gradcheck.hpp"

namespace regnet {

struct GradCheckReport {
  std::string module;
  GradCheckResult result;
  double threshold = 0.0;

  bool passed() const { return result.max_relative_error < threshold; }
};

struct GradSuiteOptions {
  std::uint64_t seed = 0;
  std::size_t hidden = 8;
  // Entries sampled per tensor in the full-model checks (0 = all).
  std::size_t full_model_samples = 24;
  double module_threshold = 1e-5;
  double model_threshold = 1e-4;
};

/// Central-difference checks of every differentiable module and of the full
/// single-task and multi-task models (eval-mode batch norm, gate noise off).
std::vector<GradCheckReport> run_gradcheck_suite(const GradSuiteOptions& opts = {});

}  // namespace regnet
