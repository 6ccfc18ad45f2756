#pragma once

#include <cstdint>
#include <vector>

#include "regnet/nn.hpp"

namespace regnet {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

/// First and second moment estimates, one pair per trainable parameter in
/// store registration order.
struct AdamWState {
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

AdamWState make_adamw_state(const ParameterStore& store);

/// One decoupled-weight-decay Adam update:
///   p <- p * (1 - lr * wd)
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
/// Parameters without a gradient are treated as having a zero gradient.
/// Throws NonFiniteGradient before touching any parameter.
void adamw_step(ParameterStore& store, AdamWState& state, double lr, const AdamWConfig& cfg);

/// Span-level form of the update, used by adamw_step and directly testable.
void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::int64_t step, double lr, const AdamWConfig& cfg);

struct OneCycleConfig {
  double max_lr = 8e-4;
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div = 1e4;
};

/// Cosine one-cycle schedule: max_lr/div_factor -> max_lr over the first
/// pct_start * total_steps steps, then max_lr -> max_lr/final_div at total_steps.
double onecycle_lr(std::int64_t step, std::int64_t total_steps, const OneCycleConfig& cfg);

}  // namespace regnet
