#include "regnet/moe.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "regnet/error.hpp"

namespace regnet {

void GateConfig::validate() const {
  if (num_experts == 0) raise(ErrorKind::ConfigError, "MoE needs at least one expert");
  if (top_k < 1 || top_k > num_experts) {
    raise(ErrorKind::ConfigError, "top_k = " + std::to_string(top_k) + " must lie in [1, " +
                                      std::to_string(num_experts) + "]");
  }
}

NoisyTopKGate::NoisyTopKGate(ParameterStore& store, Initializer& init, const std::string& name,
                             std::size_t input_dim, GateConfig cfg)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t n = cfg_.num_experts;
  w_ = store.add(name + ".w", {input_dim, n}, init.fan_in_uniform(input_dim, input_dim * n));
  w_noise_ = store.add(name + ".w_noise", {input_dim, n}, init.fan_in_uniform(input_dim, input_dim * n));
}

std::vector<std::vector<std::size_t>> top_k_indices(std::span<const double> values, std::size_t rows,
                                                     std::size_t cols, std::size_t k) {
  std::vector<std::vector<std::size_t>> out(rows);
  std::vector<std::size_t> order(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    const double* row = values.data() + r * cols;
    std::stable_sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    out[r].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(out[r].begin(), out[r].end());
  }
  return out;
}

DiffValue NoisyTopKGate::operator()(const DiffValue& x, std::mt19937_64* rng) const {
  const std::size_t b = x.rows();
  const std::size_t n = cfg_.num_experts;
  DiffValue logits = ad::matmul(x, w_);
  if (cfg_.noise_enabled && rng != nullptr) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> z(b * n);
    for (double& v : z) v = normal(*rng);
    logits = ad::add(logits, ad::mul(DiffValue::constant({b, n}, std::move(z)), ad::softplus(ad::matmul(x, w_noise_))));
  }
  std::vector<double> mask(b * n, 0.0);
  const auto keep = top_k_indices(logits.data(), b, n, cfg_.top_k);
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j : keep[r]) mask[r * n + j] = 1.0;
  if (cfg_.renormalize) return ad::softmax_rows(logits, mask);
  // Softmax is monotone, so the K largest probabilities are the K largest logits.
  return ad::mul(ad::softmax_rows(logits), DiffValue::constant({b, n}, std::move(mask)));
}

ExpertBank::ExpertBank(ParameterStore& store, Initializer& init, const std::string& name, std::size_t num_experts,
                       std::size_t dim) {
  for (std::size_t i = 0; i < num_experts; ++i)
    experts_.emplace_back(store, init, name + "." + std::to_string(i), dim, dim, dim);
}

std::vector<DiffValue> moe_combine(const DiffValue& x, const ExpertBank& bank, const std::vector<DiffValue>& gates) {
  const std::size_t b = x.rows();
  const std::size_t n = bank.size();
  for (const auto& g : gates) {
    if (g.rows() != b || g.cols() != n) raise(ErrorKind::ShapeError, "gate matrix does not match batch x experts");
  }
  std::vector<std::vector<DiffValue>> contributions(gates.size());
  std::vector<std::vector<std::size_t>> targets(gates.size());
  std::vector<std::size_t> rows;
  for (std::size_t e = 0; e < n; ++e) {
    rows.clear();
    for (std::size_t r = 0; r < b; ++r) {
      const bool used = std::any_of(gates.begin(), gates.end(), [&](const DiffValue& g) { return g.at(r, e) != 0.0; });
      if (used) rows.push_back(r);
    }
    if (rows.empty()) continue;
    const DiffValue out = bank.expert(e)(ad::gather_rows(x, rows));
    for (std::size_t t = 0; t < gates.size(); ++t) {
      contributions[t].push_back(ad::mul_col(out, ad::gather_rows(ad::column(gates[t], e), rows)));
      targets[t].insert(targets[t].end(), rows.begin(), rows.end());
    }
  }
  std::vector<DiffValue> outputs;
  for (std::size_t t = 0; t < gates.size(); ++t) {
    if (contributions[t].empty()) {
      outputs.push_back(DiffValue::constant({b, x.cols()}, 0.0));
      continue;
    }
    outputs.push_back(ad::segment_sum(ad::concat_rows(contributions[t]), targets[t], b));
  }
  return outputs;
}

DiffValue moe_forward(const DiffValue& x, const ExpertBank& bank, const NoisyTopKGate& gate, std::mt19937_64* rng) {
  return moe_combine(x, bank, {gate(x, rng)}).front();
}

DiffValue importance_loss(const DiffValue& gates) {
  const DiffValue importance = ad::scale(ad::mean(gates, 0), static_cast<double>(gates.rows()));
  const DiffValue mu = ad::mean_all(importance);
  const DiffValue centered = ad::sub(importance, ad::broadcast(mu, importance.shape()));
  const DiffValue var = ad::mean_all(ad::square(centered));
  return ad::div(var, ad::square(mu));
}

TaskHeads::TaskHeads(ParameterStore& store, Initializer& init, const std::string& name, std::size_t num_tasks,
                     std::size_t dim, std::size_t hidden) {
  for (std::size_t t = 0; t < num_tasks; ++t)
    heads_.emplace_back(store, init, name + "." + std::to_string(t), dim, hidden, 1);
}

DiffValue TaskHeads::operator()(const std::vector<DiffValue>& inputs) const {
  if (inputs.size() != heads_.size()) raise(ErrorKind::ShapeError, "one input per task head is required");
  std::vector<DiffValue> cols;
  for (std::size_t t = 0; t < heads_.size(); ++t) cols.push_back(heads_[t](inputs[t]));
  return ad::concat_cols(cols);
}

DiffValue TaskHeads::operator()(const DiffValue& shared) const {
  return (*this)(std::vector<DiffValue>(heads_.size(), shared));
}

ExpertUsageAccumulator::ExpertUsageAccumulator(std::vector<std::string> tasks, std::size_t num_experts,
                                               UsageMode mode)
    : tasks_(std::move(tasks)),
      num_experts_(num_experts),
      mode_(mode),
      totals_(tasks_.size(), std::vector<double>(num_experts, 0.0)),
      counts_(tasks_.size(), 0) {}

void ExpertUsageAccumulator::add(std::size_t task, std::span<const double> gate_row) {
  if (task >= tasks_.size() || gate_row.size() != num_experts_) {
    raise(ErrorKind::ShapeError, "expert usage row does not match the accumulator");
  }
  if (mode_ == UsageMode::GateWeights) {
    for (std::size_t e = 0; e < num_experts_; ++e) totals_[task][e] += gate_row[e];
  } else {
    const auto best = std::max_element(gate_row.begin(), gate_row.end()) - gate_row.begin();
    totals_[task][static_cast<std::size_t>(best)] += 1.0;
  }
  ++counts_[task];
}

void ExpertUsageAccumulator::merge(const ExpertUsageAccumulator& other) {
  if (other.tasks_ != tasks_ || other.num_experts_ != num_experts_) {
    raise(ErrorKind::ShapeError, "cannot merge expert usage over different tasks or experts");
  }
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    counts_[t] += other.counts_[t];
    for (std::size_t e = 0; e < num_experts_; ++e) totals_[t][e] += other.totals_[t][e];
  }
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

ExpertUsage ExpertUsageAccumulator::finish() const {
  ExpertUsage usage;
  usage.tasks = tasks_;
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    const double total = std::accumulate(totals_[t].begin(), totals_[t].end(), 0.0);
    if (counts_[t] == 0 || total <= 0.0) raise(ErrorKind::EmptySplit, "no gate rows recorded for task '" + tasks_[t] + "'");
    std::vector<double> f(num_experts_);
    for (std::size_t e = 0; e < num_experts_; ++e) f[e] = totals_[t][e] / total;
    usage.frequencies.push_back(std::move(f));
  }
  const std::size_t T = tasks_.size();
  usage.similarity.assign(T, std::vector<double>(T, 0.0));
  for (std::size_t a = 0; a < T; ++a) {
    usage.similarity[a][a] = 1.0;
    for (std::size_t b = a + 1; b < T; ++b) {
      const double s = cosine_similarity(usage.frequencies[a], usage.frequencies[b]);
      usage.similarity[a][b] = usage.similarity[b][a] = s;
    }
  }
  return usage;
}

std::string expert_usage_json(const ExpertUsage& usage) {
  nlohmann::ordered_json j;
  j["tasks"] = usage.tasks;
  nlohmann::ordered_json freqs = nlohmann::ordered_json::object();
  for (std::size_t t = 0; t < usage.tasks.size(); ++t) freqs[usage.tasks[t]] = usage.frequencies[t];
  j["frequencies"] = freqs;
  j["similarity"] = usage.similarity;
  return j.dump(2);
}

std::string expert_usage_table(const ExpertUsage& usage) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  out << std::left << std::setw(20) << "task";
  const std::size_t n = usage.frequencies.empty() ? 0 : usage.frequencies[0].size();
  for (std::size_t e = 0; e < n; ++e) out << std::right << std::setw(7) << ("E" + std::to_string(e));
  out << "\n";
  for (std::size_t t = 0; t < usage.tasks.size(); ++t) {
    out << std::left << std::setw(20) << usage.tasks[t];
    for (double f : usage.frequencies[t]) out << std::right << std::setw(7) << f;
    out << "\n";
  }
  out << "\ncosine similarity\n" << std::left << std::setw(20) << "";
  for (const auto& name : usage.tasks) out << std::right << std::setw(10) << name.substr(0, 9);
  out << "\n";
  for (std::size_t a = 0; a < usage.tasks.size(); ++a) {
    out << std::left << std::setw(20) << usage.tasks[a];
    for (double s : usage.similarity[a]) out << std::right << std::setw(10) << s;
    out << "\n";
  }
  return out.str();
}

}  // namespace regnet
