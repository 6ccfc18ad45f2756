#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "regnet/crystal.hpp"
#include "regnet/error.hpp"
#include "test_support.hpp"

using namespace regnet;
using regnet::testing::cubic;
using regnet::testing::make_structure;
using regnet::testing::random_matrix;

namespace {

Mat3 well_conditioned(std::mt19937_64& rng) {
  for (;;) {
    Mat3 m = random_matrix(rng, -3.0, 3.0);
    if (std::abs(determinant(m)) > 1.0) return m;
  }
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::IoError;
}

}  // namespace

TEST_CASE("frac_to_cart on simple cells") {
  const Vec3 p = frac_to_cart(cubic(2.0), {0.5, 0.5, 0.5});
  CHECK(p == Vec3{1.0, 1.0, 1.0});

  std::mt19937_64 rng(1);
  const Mat3 l = well_conditioned(rng);
  CHECK(frac_to_cart(l, {1, 0, 0}) == l[0]);
}

TEST_CASE("cart_to_frac on simple cells") {
  const Vec3 f = cart_to_frac(cubic(2.0), {1, 1, 1});
  CHECK(f[0] == doctest::Approx(0.5));
  CHECK(f[1] == doctest::Approx(0.5));
  CHECK(f[2] == doctest::Approx(0.5));

  std::mt19937_64 rng(2);
  const Mat3 l = well_conditioned(rng);
  const Vec3 g = cart_to_frac(l, l[1]);
  CHECK(std::abs(g[0]) < 1e-12);
  CHECK(std::abs(g[1] - 1.0) < 1e-12);
  CHECK(std::abs(g[2]) < 1e-12);
}

TEST_CASE("fractional/Cartesian round trip against an LU solve") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 500; ++trial) {
    const Mat3 l = well_conditioned(rng);
    const Vec3 f{u(rng), u(rng), u(rng)};
    const Vec3 p = frac_to_cart(l, f);

    // p = L^T f with L holding lattice vectors as rows.
    Eigen::Matrix3d lt;
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 3; ++c) lt(c, i) = l[i][c];
    const Eigen::Vector3d oracle = lt.fullPivLu().solve(Eigen::Vector3d(p[0], p[1], p[2]));
    const Vec3 back = cart_to_frac(l, p);
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(back[i] - f[i]) < 1e-12);
      CHECK(std::abs(back[i] - oracle[i]) < 1e-12);
    }
    const Eigen::Vector3d residual = lt * Eigen::Vector3d(back[0], back[1], back[2]) - Eigen::Vector3d(p[0], p[1], p[2]);
    CHECK(residual.norm() < 1e-10);
  }
}

TEST_CASE("singular lattices are rejected") {
  Mat3 l = cubic(1.0);
  l[1] = l[0];
  CHECK(kind_of([&] { frac_to_cart(l, {0, 0, 0}); }) == ErrorKind::LatticeDegenerate);
  CHECK(kind_of([&] { cart_to_frac(l, {0, 0, 0}); }) == ErrorKind::LatticeDegenerate);
  CHECK(kind_of([&] { reciprocal_basis(l, 1); }) == ErrorKind::LatticeDegenerate);
}

TEST_CASE("reciprocal basis of a cubic cell") {
  const ReciprocalBasis b = reciprocal_basis(cubic(2.0), 1);
  const double pi = std::numbers::pi;
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) CHECK(b.b[i][c] == doctest::Approx(i == c ? pi : 0.0));
  CHECK(b.volume == doctest::Approx(8.0));
  CHECK(b.right_handed);
  CHECK(b.frequencies.size() == 26);
  CHECK(reciprocal_basis(cubic(2.0), 1, true).frequencies.size() == 27);
  CHECK(reciprocal_basis(cubic(2.0), 2).frequencies.size() == 124);
}

TEST_CASE("reciprocal identity holds for random lattices, including left-handed ones") {
  std::mt19937_64 rng(4);
  int left = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Mat3 l = random_matrix(rng, -3.0, 3.0);
    if (std::abs(determinant(l)) <= 0.1) continue;
    const ReciprocalBasis b = reciprocal_basis(l, 0);
    left += b.right_handed ? 0 : 1;
    CHECK(b.volume == doctest::Approx(std::abs(determinant(l))));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double expect = i == j ? 2.0 * std::numbers::pi : 0.0;
        CHECK(std::abs(dot(l[i], b.b[j]) - expect) < 1e-9);
      }
  }
  CHECK(left > 0);
}

TEST_CASE("frequency enumeration order") {
  const auto f = enumerate_frequencies(1);
  CHECK(f.front().n == IVec3{-1, -1, -1});
  CHECK(f.back().n == IVec3{1, 1, 1});
  CHECK(std::is_sorted(f.begin(), f.end()));
  for (const auto& x : f) CHECK(x.n != IVec3{0, 0, 0});
}

TEST_CASE("wrap_fractional") {
  CHECK(wrap_fractional({1.25, -0.5, 0.0}) == Vec3{0.25, 0.5, 0.0});
  CHECK(wrap_fractional({0.999999, 0.0, 0.3}) == Vec3{0.999999, 0.0, 0.3});
  const Vec3 tiny = wrap_fractional({-1e-18, 0, 0});
  CHECK(tiny[0] >= 0.0);
  CHECK(tiny[0] < 1.0);
  CHECK(kind_of([] { wrap_fractional({NAN, 0, 0}); }) == ErrorKind::NonFiniteCoordinate);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec3 x{u(rng), u(rng), u(rng)};
    const Vec3 w = wrap_fractional(x);
    CHECK(wrap_fractional(w) == w);
    for (int i = 0; i < 3; ++i) {
      CHECK(w[i] >= 0.0);
      CHECK(w[i] < 1.0);
    }
  }
}

TEST_CASE("validate_structure") {
  const CrystalStructure nacl = make_structure(cubic(5.64), {{0, 0, 0}, {0.5, 0.5, 0.5}}, {11, 17});
  CHECK(validate_structure(nacl).empty());

  CrystalStructure flat = nacl;
  flat.lattice[1] = flat.lattice[0];
  auto v = validate_structure(flat);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == ViolationKind::LatticeDegenerate);

  CrystalStructure z0 = nacl;
  z0.atomic_numbers[0] = 0;
  v = validate_structure(z0);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == ViolationKind::InvalidAtomicNumber);

  CrystalStructure mismatch = nacl;
  mismatch.atomic_numbers.push_back(11);
  v = validate_structure(mismatch);
  REQUIRE_FALSE(v.empty());
  CHECK(v[0].kind == ViolationKind::CountMismatch);

  CrystalStructure empty = nacl;
  empty.atomic_numbers.clear();
  empty.frac_coords.clear();
  v = validate_structure(empty);
  REQUIRE_FALSE(v.empty());
  CHECK(v[0].kind == ViolationKind::EmptyStructure);

  CrystalStructure nan = nacl;
  nan.frac_coords[1][2] = NAN;
  v = validate_structure(nan);
  REQUIRE_FALSE(v.empty());
  CHECK(v[0].kind == ViolationKind::NonFiniteCoordinate);
}

TEST_CASE("wrapped keeps every coordinate in the unit cell") {
  const CrystalStructure s = make_structure(cubic(3.0), {{1.5, -0.25, 2.0}}, {8});
  const CrystalStructure w = wrapped(s);
  CHECK(w.frac_coords[0] == Vec3{0.5, 0.75, 0.0});
}
