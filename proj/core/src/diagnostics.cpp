#include "regnet/diagnostics.hpp"

#include <cmath>
#include <random>

#include "regnet/model.hpp"
#include "regnet/synthetic.hpp"

namespace regnet {

namespace {

std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

DiffValue random_leaf(std::mt19937_64& rng, Shape shape, double scale = 1.0) {
  return DiffValue::leaf(shape, random_values(rng, shape.size(), scale));
}

/// sum(y * R) with a fixed random R, so every output entry matters.
DiffValue project(const DiffValue& y, const std::vector<double>& weights) {
  return ad::sum(ad::mul(y, DiffValue::constant(y.shape(), weights)));
}

struct Suite {
  GradSuiteOptions opts;
  std::mt19937_64 rng;
  std::vector<GradCheckReport> reports;

  void check(const std::string& name, Shape out_shape, const std::function<DiffValue()>& f,
             std::vector<NamedValue> inputs, bool full_model = false) {
    const auto weights = random_values(rng, out_shape.size());
    GradCheckOptions go;
    go.seed = opts.seed;
    go.max_entries_per_tensor = full_model ? opts.full_model_samples : 0;
    GradCheckResult r = grad_check([&] { return project(f(), weights); }, std::move(inputs), go);
    reports.push_back({name, std::move(r), full_model ? opts.model_threshold : opts.module_threshold});
  }
};

std::vector<NamedValue> with(std::vector<NamedValue> a, const std::vector<NamedValue>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Leaves a store's running statistics at non-trivial values so eval-mode
// batch norm is not the identity.
void randomize_buffers(ParameterStore& store, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (auto& p : store.all()) {
    if (p.trainable) continue;
    for (double& x : p.value.mutable_data()) x = u(rng);
  }
}

// Training-mode passes populate batch-norm running statistics so that the
// eval-mode checks run at realistic activation scales.
void warm_running_stats(const Model& model, const BatchedInput& batch, int passes = 40) {
  ad::NoGradGuard no_grad;
  for (int i = 0; i < passes; ++i) model.forward(batch, {true, nullptr});
}

// Rescales gate weights so logits are O(1) at the check point. Pooled
// embeddings of a freshly initialized sum-aggregating model are large, which
// saturates the softmax and leaves gate gradients below finite-difference noise.
void temper_gates(Model& model, const BatchedInput& batch) {
  double rms = 0.0;
  {
    ad::NoGradGuard no_grad;
    const auto pooled = model.forward(batch).pooled.data();
    for (double v : pooled) rms += v * v;
    rms = std::sqrt(rms / static_cast<double>(pooled.size()));
  }
  if (rms <= 1.0) return;
  for (auto& p : model.params().all()) {
    if (p.name.rfind("moe.gate", 0) != 0 || !p.name.ends_with(".w")) continue;
    for (double& x : p.value.mutable_data()) x /= rms;
  }
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(const GradSuiteOptions& opts) {
  Suite s{opts, std::mt19937_64(opts.seed), {}};
  auto& rng = s.rng;
  const std::size_t d = opts.hidden;

  SyntheticOptions so;
  so.count = 2;
  so.min_atoms = 2;
  so.max_atoms = 3;
  so.seed = opts.seed + 11;
  so.tasks = {"a", "b"};
  const auto crystals = synthetic_dataset(so);

  ModelConfig mc;
  mc.hidden = d;
  mc.num_blocks = 2;
  mc.k_neighbors = 4;
  mc.filter_hidden = 6;
  mc.head_hidden = 6;
  mc.edge.num_centers = 16;
  mc.tasks = {"a"};
  mc.seed = opts.seed;
  std::vector<PreparedStructure> prepared;
  for (const auto& c : crystals) prepared.push_back(prepare_structure(c, mc));
  const BatchedInput batch = make_batch({&prepared[0], &prepared[1]}, 1);
  const std::size_t n_atoms = batch.atomic_numbers.size();
  const std::size_t n_edges = batch.edges.size();

  {
    ParameterStore store;
    Initializer init(opts.seed);
    Linear lin(store, init, "lin", 5, 4);
    DiffValue x = random_leaf(rng, {3, 5});
    s.check("linear", {3, 4}, [&] { return lin(x); }, with({{"x", x}}, trainable_inputs(store)));
  }
  {
    ParameterStore store;
    Initializer init(opts.seed);
    Mlp2 mlp(store, init, "mlp", 4, 6, 3);
    DiffValue x = random_leaf(rng, {5, 4});
    s.check("mlp", {5, 3}, [&] { return mlp(x); }, with({{"x", x}}, trainable_inputs(store)));
  }
  for (bool training : {false, true}) {
    ParameterStore store;
    BatchNorm bn(store, "bn", 4);
    randomize_buffers(store, rng);
    for (auto& p : store.all())
      if (p.trainable) p.value.mutable_data()[0] += 0.3;
    DiffValue x = random_leaf(rng, {6, 4});
    // Training mode updates running statistics; restore them around every call.
    std::vector<std::vector<double>> saved;
    for (const auto& p : store.all()) saved.emplace_back(p.value.data().begin(), p.value.data().end());
    auto f = [&] {
      for (std::size_t i = 0; i < store.all().size(); ++i) {
        if (store.all()[i].trainable) continue;
        auto dst = store.all()[i].value.mutable_data();
        std::copy(saved[i].begin(), saved[i].end(), dst.begin());
      }
      return bn(x, training);
    };
    s.check(training ? "batch_norm (train)" : "batch_norm (eval)", {6, 4}, f,
            with({{"x", x}}, trainable_inputs(store)));
  }
  {
    ParameterStore store;
    Initializer init(opts.seed);
    const AtomFeatureTable table = AtomFeatureTable::one_hot();
    AtomEmbedding emb(store, init, "atom", table.dim(), d);
    s.check("atom_embedding", {n_atoms, d}, [&] { return emb(table, batch.atomic_numbers); }, trainable_inputs(store));
  }
  {
    ParameterStore store;
    Initializer init(opts.seed);
    GlobalInit g(store, init, "global", d);
    DiffValue h = random_leaf(rng, {n_atoms, d});
    s.check("global_init", {n_atoms, d}, [&] { return g(h); }, with({{"h", h}}, trainable_inputs(store)));
  }
  {
    ParameterStore store;
    Initializer init(opts.seed);
    EdgeEmbedding e(store, init, "edge", mc.edge, d);
    s.check("edge_embedding", {n_edges, d}, [&] { return e(batch.edge_distance); }, trainable_inputs(store));
  }
  for (Aggregation agg : {Aggregation::Sum, Aggregation::Mean}) {
    ParameterStore store;
    Initializer init(opts.seed);
    LocalLayer layer(store, init, "local", d, agg);
    randomize_buffers(store, rng);
    DiffValue h = random_leaf(rng, {n_atoms, d});
    DiffValue v = random_leaf(rng, {n_edges, d});
    s.check(agg == Aggregation::Sum ? "local_layer (sum)" : "local_layer (mean)", {n_atoms, d},
            [&] { return layer(h, batch.edges, v, false); }, with({{"h", h}, {"v", v}}, trainable_inputs(store)));
  }
  for (FilterMode mode : {FilterMode::ContinuousMlp, FilterMode::PerIndexTable}) {
    ParameterStore store;
    Initializer init(opts.seed);
    ReciprocalBlock block(store, init, "recip", mode, d, 6, mc.num_frequencies(), 1.0);
    DiffValue h = random_leaf(rng, {n_atoms, d});
    s.check(mode == FilterMode::ContinuousMlp ? "reciprocal_block (mlp filter)" : "reciprocal_block (table filter)",
            {n_atoms, d}, [&] { return block(h, batch.reciprocal); }, with({{"h", h}}, trainable_inputs(store)));
  }
  for (bool noise : {false, true}) {
    ParameterStore store;
    Initializer init(opts.seed);
    GateConfig gc;
    gc.num_experts = 5;
    gc.top_k = 2;
    gc.noise_enabled = noise;
    NoisyTopKGate gate(store, init, "gate", d, gc);
    DiffValue x = random_leaf(rng, {4, d});
    auto f = [&] {
      std::mt19937_64 noise_rng(opts.seed + 5);
      return gate(x, &noise_rng);
    };
    s.check(noise ? "moe_gate (fixed noise sample)" : "moe_gate", {4, 5}, f, with({{"x", x}}, trainable_inputs(store)));
  }
  {
    ParameterStore store;
    Initializer init(opts.seed);
    GateConfig gc;
    gc.num_experts = 5;
    gc.top_k = 2;
    gc.noise_enabled = false;
    NoisyTopKGate gate(store, init, "gate", d, gc);
    ExpertBank bank(store, init, "expert", 5, d);
    DiffValue x = random_leaf(rng, {4, d});
    s.check("moe_forward", {4, d}, [&] { return moe_forward(x, bank, gate, nullptr); },
            with({{"x", x}}, trainable_inputs(store)));
    s.check("importance_loss", {1, 1}, [&] { return importance_loss(gate(x, nullptr)); },
            with({{"x", x}}, trainable_inputs(store)));
  }
  {
    ParameterStore store;
    Initializer init(opts.seed);
    TaskHeads heads(store, init, "head", 3, d, 6);
    DiffValue y = random_leaf(rng, {4, d});
    s.check("task_heads", {4, 3}, [&] { return heads(y); }, with({{"y", y}}, trainable_inputs(store)));
  }
  {
    ParameterStore store;
    Initializer init(opts.seed);
    Mlp2 head(store, init, "head", d, 6, 1);
    DiffValue h = random_leaf(rng, {n_atoms, d});
    s.check("single_task_decoder", {2, 1},
            [&] { return head(ad::segment_mean(h, batch.segment, batch.num_structures)); },
            with({{"h", h}}, trainable_inputs(store)));
  }
  {
    ModelConfig cfg = mc;
    cfg.filter_init_scale = 1.0;
    Model model(cfg);
    warm_running_stats(model, batch);
    s.check("full model (single task)", {2, 1}, [&] { return model.forward(batch).predictions; },
            trainable_inputs(model.params()), true);
  }
  {
    ModelConfig cfg = mc;
    cfg.filter_init_scale = 1.0;
    cfg.tasks = {"a", "b"};
    MoeConfig moe;
    moe.gate.num_experts = 4;
    moe.gate.top_k = 2;
    moe.gate.noise_enabled = false;
    cfg.moe = moe;
    Model model(cfg);
    std::vector<PreparedStructure> mt;
    for (const auto& c : crystals) mt.push_back(prepare_structure(c, cfg));
    const BatchedInput mt_batch = make_batch({&mt[0], &mt[1]}, 2);
    warm_running_stats(model, mt_batch);
    temper_gates(model, mt_batch);
    s.check("full model (multi-task)", {2, 2}, [&] { return model.forward(mt_batch).predictions; },
            trainable_inputs(model.params()), true);
  }
  return s.reports;
}

}  // namespace regnet
