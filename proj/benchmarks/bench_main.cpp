#include <random>

#include <benchmark/benchmark.h>

#include "regnet/model.hpp"
#include "regnet/synthetic.hpp"

using namespace regnet;

namespace {

std::vector<CrystalStructure> crystals(std::size_t count, std::size_t max_atoms) {
  SyntheticOptions so;
  so.count = count;
  so.min_atoms = max_atoms;
  so.max_atoms = max_atoms;
  so.seed = 1;
  return synthetic_dataset(so);
}

void BM_BuildGraph(benchmark::State& state) {
  const auto s = crystals(1, static_cast<std::size_t>(state.range(0)))[0];
  for (auto _ : state) benchmark::DoNotOptimize(build_graph(s, 16));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.num_atoms()));
}
BENCHMARK(BM_BuildGraph)->Arg(4)->Arg(8)->Arg(16);

void BM_StructureFactors(benchmark::State& state) {
  const int kmax = static_cast<int>(state.range(1));
  const auto s = crystals(1, static_cast<std::size_t>(state.range(0)))[0];
  const std::size_t n = s.num_atoms();
  const ReciprocalBasis basis = reciprocal_basis(s.lattice, kmax);
  const auto batch = make_reciprocal_batch(s.frac_coords, basis);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  std::vector<double> h(n * 64);
  for (double& x : h) x = g(rng);
  const DiffValue hv = DiffValue::constant({n, 64}, h);
  const DiffValue w = DiffValue::constant({basis.frequencies.size(), 64}, 0.5);
  ad::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(inverse_filtered(structure_factors(hv, batch), batch, w));
}
BENCHMARK(BM_StructureFactors)->Args({8, 1})->Args({16, 1})->Args({16, 2});

void BM_ForwardBackward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.hidden = static_cast<std::size_t>(state.range(0));
  cfg.num_blocks = 3;
  const auto data = crystals(16, 8);
  std::vector<PreparedStructure> prepared;
  for (const auto& s : data) prepared.push_back(prepare_structure(s, cfg));
  std::vector<const PreparedStructure*> ptrs;
  for (const auto& p : prepared) ptrs.push_back(&p);
  const auto batch = make_batch(ptrs, 1);
  Model model(cfg);
  for (auto _ : state) {
    model.params().zero_grad();
    const ForwardResult r = model.forward(batch, {true, nullptr});
    ad::backward(ad::sum(r.predictions));
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
