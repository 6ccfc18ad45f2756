#include "regnet/optim.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "regnet/error.hpp"

namespace regnet {

AdamWState make_adamw_state(const ParameterStore& store) {
  AdamWState state;
  for (const auto& p : store.all()) {
    if (!p.trainable) continue;
    state.m.emplace_back(p.value.shape().size(), 0.0);
    state.v.emplace_back(p.value.shape().size(), 0.0);
  }
  return state;
}

void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::int64_t step, double lr, const AdamWConfig& cfg) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    param[i] = param[i] * decay - lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

void adamw_step(ParameterStore& store, AdamWState& state, double lr, const AdamWConfig& cfg) {
  std::size_t k = 0;
  for (const auto& p : store.all()) {
    if (!p.trainable) continue;
    if (k >= state.m.size() || state.m[k].size() != p.value.shape().size()) {
      raise(ErrorKind::ShapeError, "optimizer state does not match parameter '" + p.name + "'");
    }
    for (double g : p.value.grad()) {
      if (!std::isfinite(g)) raise(ErrorKind::NonFiniteGradient, "gradient of '" + p.name + "' is not finite");
    }
    ++k;
  }
  if (k != state.m.size()) raise(ErrorKind::ShapeError, "optimizer state has extra entries");
  ++state.step;
  k = 0;
  for (auto& p : store.all()) {
    if (!p.trainable) continue;
    adamw_update(p.value.mutable_data(), p.value.grad(), state.m[k], state.v[k], state.step, lr, cfg);
    ++k;
  }
}

double onecycle_lr(std::int64_t step, std::int64_t total_steps, const OneCycleConfig& cfg) {
  if (total_steps <= 0 || step < 0 || step > total_steps) {
    std::ostringstream msg;
    msg << "step " << step << " outside [0, " << total_steps << "]";
    raise(ErrorKind::RangeError, msg.str());
  }
  const double initial = cfg.max_lr / cfg.div_factor;
  const double final_lr = cfg.max_lr / cfg.final_div;
  const double peak_step = cfg.pct_start * static_cast<double>(total_steps);
  auto anneal = [](double start, double end, double pct) {
    return end + (start - end) / 2.0 * (1.0 + std::cos(std::numbers::pi * pct));
  };
  const double s = static_cast<double>(step);
  if (s <= peak_step) {
    if (peak_step <= 0.0) return cfg.max_lr;
    return anneal(initial, cfg.max_lr, s / peak_step);
  }
  const double span = static_cast<double>(total_steps) - peak_step;
  return anneal(cfg.max_lr, final_lr, (s - peak_step) / span);
}

}  // namespace regnet
