#include <cmath>
#include <random>

#include "doctest.h"
#include "regnet/error.hpp"
#include "regnet/gradcheck.hpp"
#include "regnet/reciprocal.hpp"
#include "test_support.hpp"

using namespace regnet;
using regnet::testing::max_abs_diff;

namespace {

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

std::vector<Vec3> random_frac(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> f(n);
  for (auto& x : f) x = {u(rng), u(rng), u(rng)};
  return f;
}

}  // namespace

TEST_CASE("single atom at the origin has zero phase") {
  const ReciprocalBasis basis = reciprocal_basis(regnet::testing::cubic(3.0), 1);
  const std::vector<Vec3> f{{0, 0, 0}};
  const auto batch = make_reciprocal_batch(f, basis);
  const DiffValue h = DiffValue::constant({1, 3}, {0.5, -2.0, 1.0});
  const auto r = structure_factors(h, batch);
  REQUIRE(r.real.rows() == 26);
  for (std::size_t k = 0; k < 26; ++k)
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(r.real.at(k, c) == h.at(0, c));
      CHECK(r.imag.at(k, c) == 0.0);
    }

  const DiffValue ones = DiffValue::constant({26, 3}, 1.0);
  const DiffValue back = inverse_filtered(r, batch, ones);
  for (std::size_t c = 0; c < 3; ++c) CHECK(back.at(0, c) == doctest::Approx(26.0 * h.at(0, c)).epsilon(1e-14));

  const DiffValue zeros = DiffValue::constant({26, 3}, 0.0);
  const DiffValue silent = inverse_filtered(r, batch, zeros);
  for (double x : silent.data()) CHECK(x == 0.0);
}

TEST_CASE("two identical atoms half a cell apart interfere destructively") {
  ReciprocalBasis basis = reciprocal_basis(regnet::testing::cubic(2.0), 1);
  basis.frequencies = {{{1, 0, 0}}};
  const std::vector<Vec3> f{{0, 0, 0}, {0.5, 0, 0}};
  const auto batch = make_reciprocal_batch(f, basis);
  const DiffValue h = DiffValue::constant({2, 2}, {1.5, -0.5, 1.5, -0.5});
  const auto r = structure_factors(h, batch);
  for (double x : r.real.data()) CHECK(std::abs(x) < 1e-15);
  for (double x : r.imag.data()) CHECK(std::abs(x) < 1e-15);
}

TEST_CASE("structure factors and inverse match naive loops") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 8, d = 5;
    const int kmax = 1 + trial % 2;
    const Mat3 lattice = regnet::testing::random_matrix(rng, -3.0, 3.0);
    if (std::abs(determinant(lattice)) < 0.1) continue;
    const ReciprocalBasis basis = reciprocal_basis(lattice, kmax);
    const auto f = random_frac(rng, n);
    const auto batch = make_reciprocal_batch(f, basis);
    const auto hv = uniform(rng, n * d);
    const DiffValue h = DiffValue::constant({n, d}, hv);
    const auto r = structure_factors(h, batch);
    const auto oracle = regnet::testing::naive_structure_factors(hv, d, f, basis.frequencies);
    CHECK(max_abs_diff(r.real.data(), oracle.re) < 1e-10);
    CHECK(max_abs_diff(r.imag.data(), oracle.im) < 1e-10);

    const std::size_t m = basis.frequencies.size();
    const auto w = uniform(rng, m * d);
    const DiffValue back = inverse_filtered(r, batch, DiffValue::constant({m, d}, w));
    CHECK(max_abs_diff(back.data(), regnet::testing::naive_inverse(oracle, w, d, f, basis.frequencies)) < 1e-10);
  }
}

TEST_CASE("batched phases are block diagonal") {
  std::mt19937_64 rng(4);
  const std::size_t d = 3;
  const ReciprocalBasis b1 = reciprocal_basis(regnet::testing::cubic(3.0), 1);
  const ReciprocalBasis b2 = reciprocal_basis({{{4, 0, 0}, {1, 5, 0}, {0.5, 0.2, 3.5}}}, 1);
  const auto f1 = random_frac(rng, 3);
  const auto f2 = random_frac(rng, 5);
  const auto batch = make_reciprocal_batch(std::vector<ReciprocalInput>{{&f1, &b1}, {&f2, &b2}});
  CHECK(batch.num_atoms == 8);
  CHECK(batch.num_frequency_rows == 52);
  const auto hv = uniform(rng, 8 * d);
  const auto r = structure_factors(DiffValue::constant({8, d}, hv), batch);
  const auto o1 = regnet::testing::naive_structure_factors(std::span(hv).first(3 * d), d, f1, b1.frequencies);
  const auto o2 = regnet::testing::naive_structure_factors(std::span(hv).subspan(3 * d), d, f2, b2.frequencies);
  CHECK(max_abs_diff(r.real.data().first(26 * d), o1.re) < 1e-12);
  CHECK(max_abs_diff(r.real.data().subspan(26 * d), o2.re) < 1e-12);
  CHECK(max_abs_diff(r.imag.data().subspan(26 * d), o2.im) < 1e-12);
  CHECK(batch.k_norm[26] == doctest::Approx(b2.k_norm(b2.frequencies[0])));
  CHECK(batch.frequency_slot[26] == 0);
}

TEST_CASE("reciprocal block identities and translation invariance") {
  std::mt19937_64 rng(5);
  const std::size_t n = 6, d = 4;
  const Mat3 lattice{{{4.0, 0.3, 0.0}, {0.5, 3.6, 0.2}, {0.1, -0.4, 5.0}}};
  const ReciprocalBasis basis = reciprocal_basis(lattice, 1);
  const auto f = random_frac(rng, n);
  const DiffValue h = DiffValue::constant({n, d}, uniform(rng, n * d));

  for (FilterMode mode : {FilterMode::ContinuousMlp, FilterMode::PerIndexTable}) {
    ParameterStore store;
    Initializer init(5);
    ReciprocalBlock block(store, init, "recip", mode, d, 6, basis.frequencies.size(), 1.0);
    const DiffValue out = block(h, make_reciprocal_batch(f, basis));

    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int trial = 0; trial < 10; ++trial) {
      const Vec3 t{u(rng), u(rng), u(rng)};
      std::vector<Vec3> g = f;
      for (auto& x : g) x = wrap_fractional({x[0] + t[0], x[1] + t[1], x[2] + t[2]});
      const DiffValue moved = block(h, make_reciprocal_batch(g, basis));
      CHECK(max_abs_diff(out.data(), moved.data()) < 1e-9);
    }

    for (auto& p : store.all())
      for (double& x : p.value.mutable_data()) x = 0.0;
    const DiffValue identity = block(h, make_reciprocal_batch(f, basis));
    CHECK(max_abs_diff(identity.data(), h.data()) == 0.0);
  }
}

TEST_CASE("reciprocal block gradients") {
  std::mt19937_64 rng(6);
  const std::size_t n = 5, d = 4;
  const ReciprocalBasis basis = reciprocal_basis({{{3.5, 0, 0}, {0.4, 4.2, 0}, {0.3, 0.6, 3.9}}}, 1);
  const auto f = random_frac(rng, n);
  const auto batch = make_reciprocal_batch(f, basis);
  for (FilterMode mode : {FilterMode::ContinuousMlp, FilterMode::PerIndexTable}) {
    ParameterStore store;
    Initializer init(6);
    ReciprocalBlock block(store, init, "recip", mode, d, 6, basis.frequencies.size(), 1.0);
    const DiffValue h = DiffValue::leaf({n, d}, uniform(rng, n * d));
    const DiffValue w = DiffValue::constant({n, d}, uniform(rng, n * d));
    std::vector<NamedValue> in{{"h", h}};
    for (const auto& p : trainable_inputs(store)) in.push_back(p);
    const GradCheckResult r = grad_check([&] { return ad::sum(ad::mul(block(h, batch), w)); }, in);
    CHECK(r.max_relative_error < 1e-5);
  }
}

TEST_CASE("mismatched frequency sets are rejected") {
  std::mt19937_64 rng(7);
  const ReciprocalBasis basis = reciprocal_basis(regnet::testing::cubic(3.0), 1);
  const auto f = random_frac(rng, 2);
  const auto batch = make_reciprocal_batch(f, basis);
  const auto r = structure_factors(DiffValue::constant({2, 3}, 1.0), batch);
  try {
    inverse_filtered(r, batch, DiffValue::constant({25, 3}, 1.0));
    FAIL("expected FrequencyMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::FrequencyMismatch);
  }
  CHECK_THROWS_AS(structure_factors(DiffValue::constant({3, 3}, 1.0), batch), Error);

  // A table filter sized for kmax = 1 cannot serve a kmax = 2 batch.
  ParameterStore store;
  Initializer init(7);
  ReciprocalFilter filter(store, init, "f", FilterMode::PerIndexTable, 3, 4, 26, 1.0);
  const ReciprocalBasis wide = reciprocal_basis(regnet::testing::cubic(3.0), 2);
  CHECK_THROWS_AS(filter(make_reciprocal_batch(f, wide)), Error);
}

TEST_CASE("small initial filter keeps the long-range update small") {
  std::mt19937_64 rng(8);
  const std::size_t n = 6, d = 16;
  const ReciprocalBasis basis = reciprocal_basis({{{3.5, 0, 0}, {0.4, 4.2, 0}, {0.3, 0.6, 3.9}}}, 1);
  const auto f = random_frac(rng, n);
  const DiffValue h = DiffValue::constant({n, d}, uniform(rng, n * d));
  ParameterStore store;
  Initializer init(8);
  ReciprocalBlock block(store, init, "recip", FilterMode::ContinuousMlp, d, 64, 26, 1e-5);
  const DiffValue g = block.contribution(h, make_reciprocal_batch(f, basis));
  double gn = 0.0, hn = 0.0;
  for (double x : g.data()) gn += x * x;
  for (double x : h.data()) hn += x * x;
  CHECK(std::sqrt(gn / hn) < 0.01);
}
