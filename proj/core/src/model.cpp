#include "regnet/model.hpp"

#include <cmath>

#include "regnet/error.hpp"

namespace regnet {

std::size_t ModelConfig::num_frequencies() const { return enumerate_frequencies(kmax, include_zero_frequency).size(); }

void ModelConfig::validate() const {
  if (num_blocks < 1) raise(ErrorKind::ConfigError, "num_blocks must be at least 1");
  if (hidden < 1) raise(ErrorKind::ConfigError, "hidden width must be at least 1");
  if (k_neighbors < 1) raise(ErrorKind::ConfigError, "k_neighbors must be at least 1");
  if (!(radius_scale >= 1.0)) raise(ErrorKind::ConfigError, "radius_scale must be >= 1");
  if (kmax < 0) raise(ErrorKind::ConfigError, "kmax must be non-negative");
  if (reciprocal && num_frequencies() == 0) raise(ErrorKind::ConfigError, "reciprocal block needs a non-empty frequency set");
  if (tasks.empty()) raise(ErrorKind::ConfigError, "at least one task is required");
  for (std::size_t a = 0; a < tasks.size(); ++a)
    for (std::size_t b = a + 1; b < tasks.size(); ++b)
      if (tasks[a] == tasks[b]) raise(ErrorKind::ConfigError, "duplicate task '" + tasks[a] + "'");
  if (!moe && tasks.size() != 1) raise(ErrorKind::ConfigError, "several tasks require the MoE decoder");
  if (moe) moe->gate.validate();
  edge.validate();
}

AtomFeatureTable load_atom_features(const ModelConfig& cfg) {
  return cfg.atom_features.empty() ? AtomFeatureTable::one_hot() : AtomFeatureTable::from_json_file(cfg.atom_features);
}

PreparedStructure prepare_structure(const CrystalStructure& s, const ModelConfig& cfg) {
  const auto violations = validate_structure(s);
  if (!violations.empty()) {
    raise(ErrorKind::ValidationError, "structure '" + s.id + "': " + violations.front().field + ": " +
                                          violations.front().reason);
  }
  PreparedStructure p;
  p.id = s.id;
  p.atomic_numbers = s.atomic_numbers;
  p.frac_coords = s.frac_coords;
  p.basis = reciprocal_basis(s.lattice, cfg.kmax, cfg.include_zero_frequency);
  const PeriodicGraph graph = build_graph(s, cfg.k_neighbors, cfg.radius_scale);
  for (const auto& e : graph.edges) {
    p.edge_src.push_back(e.src);
    p.edge_dst.push_back(e.dst);
    p.edge_distance.push_back(e.distance);
  }
  for (const auto& task : cfg.tasks) {
    const auto it = s.labels.find(task);
    p.labels.push_back(it == s.labels.end() ? std::nullopt : it->second);
  }
  return p;
}

BatchedInput make_batch(const std::vector<const PreparedStructure*>& structures, std::size_t num_tasks) {
  BatchedInput b;
  b.num_structures = structures.size();
  b.num_tasks = num_tasks;
  b.labels.assign(structures.size() * num_tasks, 0.0);
  b.mask.assign(structures.size() * num_tasks, 0.0);
  std::vector<ReciprocalInput> recip;
  std::size_t offset = 0;
  for (std::size_t si = 0; si < structures.size(); ++si) {
    const PreparedStructure& s = *structures[si];
    if (!structures.empty() && s.basis.frequencies != structures.front()->basis.frequencies) {
      raise(ErrorKind::FrequencyMismatch, "structures in one batch were prepared with different frequency sets");
    }
    b.ids.push_back(s.id);
    b.atomic_numbers.insert(b.atomic_numbers.end(), s.atomic_numbers.begin(), s.atomic_numbers.end());
    b.segment.insert(b.segment.end(), s.num_atoms(), si);
    for (std::size_t e = 0; e < s.edge_src.size(); ++e) {
      b.edges.src.push_back(s.edge_src[e] + offset);
      b.edges.dst.push_back(s.edge_dst[e] + offset);
    }
    b.edge_distance.insert(b.edge_distance.end(), s.edge_distance.begin(), s.edge_distance.end());
    for (std::size_t t = 0; t < num_tasks && t < s.labels.size(); ++t) {
      if (s.labels[t]) {
        b.labels[si * num_tasks + t] = *s.labels[t];
        b.mask[si * num_tasks + t] = 1.0;
      }
    }
    recip.push_back({&s.frac_coords, &s.basis});
    offset += s.num_atoms();
  }
  b.reciprocal = make_reciprocal_batch(recip);
  return b;
}

Model::Model(ModelConfig cfg) : Model(cfg, load_atom_features(cfg)) {}

Model::Model(ModelConfig cfg, AtomFeatureTable table) : cfg_(std::move(cfg)), table_(std::move(table)) {
  cfg_.validate();
  build();
}

void Model::build() {
  Initializer init(cfg_.seed);
  const std::size_t d = cfg_.hidden;
  atom_embed_ = AtomEmbedding(store_, init, "embed.atom", table_.dim(), d);
  global_init_ = GlobalInit(store_, init, "embed.global", d);
  edge_embed_ = EdgeEmbedding(store_, init, "embed.edge", cfg_.edge, d);
  const std::size_t slots = cfg_.num_frequencies();
  for (std::size_t i = 0; i < cfg_.num_blocks; ++i) {
    const std::string prefix = "block" + std::to_string(i);
    local_.emplace_back(store_, init, prefix + ".local", d, cfg_.aggregation);
    if (cfg_.reciprocal) {
      recip_.emplace_back(store_, init, prefix + ".recip", cfg_.filter_mode, d, cfg_.filter_hidden, slots,
                          cfg_.filter_init_scale);
    }
  }
  if (cfg_.moe) {
    experts_ = ExpertBank(store_, init, "moe.expert", cfg_.moe->gate.num_experts, d);
    const std::size_t num_gates = cfg_.moe->per_task_gates ? cfg_.tasks.size() : 1;
    for (std::size_t g = 0; g < num_gates; ++g)
      gates_.emplace_back(store_, init, "moe.gate" + std::to_string(g), d, cfg_.moe->gate);
    task_heads_ = TaskHeads(store_, init, "head", cfg_.tasks.size(), d, cfg_.head_hidden);
  } else {
    stl_head_ = Mlp2(store_, init, "head", d, cfg_.head_hidden, 1);
  }
}

std::size_t Model::gate_for_task(std::size_t t) const { return gates_.size() == 1 ? 0 : t; }

namespace {

double frobenius(const DiffValue& v) {
  double s = 0.0;
  for (double x : v.data()) s += x * x;
  return std::sqrt(s);
}

}  // namespace

ForwardResult Model::forward(const BatchedInput& batch, const ForwardOptions& opts) const {
  if (batch.num_tasks != cfg_.tasks.size()) {
    raise(ErrorKind::ShapeError, "batch carries " + std::to_string(batch.num_tasks) + " tasks, model expects " +
                                     std::to_string(cfg_.tasks.size()));
  }
  if (batch.num_structures == 0) raise(ErrorKind::ShapeError, "empty batch");
  ForwardResult out;
  DiffValue h_local = atom_embed_(table_, batch.atomic_numbers);
  DiffValue h_global = global_init_(h_local);
  const DiffValue v_e = edge_embed_(batch.edge_distance);
  for (std::size_t i = 0; i < cfg_.num_blocks; ++i) {
    const DiffValue u = local_[i](h_local, batch.edges, v_e, opts.training);
    DiffValue g = h_global;
    if (cfg_.reciprocal) {
      const DiffValue c = recip_[i].contribution(h_global, batch.reciprocal);
      const double hn = frobenius(h_global);
      out.reciprocal_ratio.push_back(hn > 0.0 ? frobenius(c) / hn : 0.0);
      g = ad::add(h_global, c);
    }
    if (cfg_.fusion == Fusion::MergeEveryBlock) {
      h_local = h_global = ad::add(u, g);
    } else {
      h_local = u;
      h_global = g;
    }
  }
  const DiffValue h = cfg_.fusion == Fusion::MergeEveryBlock ? h_local : ad::add(h_local, h_global);
  out.pooled = ad::segment_mean(h, batch.segment, batch.num_structures);
  if (!cfg_.moe) {
    out.predictions = stl_head_(out.pooled);
    return out;
  }
  for (const auto& gate : gates_) out.gates.push_back(gate(out.pooled, opts.noise_rng));
  const std::vector<DiffValue> mixed = moe_combine(out.pooled, experts_, out.gates);
  std::vector<DiffValue> per_task;
  for (std::size_t t = 0; t < cfg_.tasks.size(); ++t) per_task.push_back(mixed[gate_for_task(t)]);
  out.predictions = task_heads_(per_task);
  if (cfg_.moe->importance_weight > 0.0) {
    DiffValue total;
    for (const auto& g : out.gates) {
      const DiffValue term = importance_loss(g);
      total = total.valid() ? ad::add(total, term) : term;
    }
    out.aux_loss = ad::scale(total, cfg_.moe->importance_weight);
  }
  return out;
}

}  // namespace regnet
