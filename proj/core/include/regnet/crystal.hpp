#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace regnet {

using Vec3 = std::array<double, 3>;
using IVec3 = std::array<int, 3>;

/// 3x3 matrix stored as three rows. A lattice uses rows l1, l2, l3 (Angstrom),
/// so a Cartesian position is p = f1*l1 + f2*l2 + f3*l3.
using Mat3 = std::array<Vec3, 3>;

inline constexpr double kDefaultVolumeEpsilon = 1e-6;   // A^3
inline constexpr double kDefaultDistanceEpsilon = 1e-6;  // A

// Small vector helpers used throughout the geometry code.
double dot(const Vec3& a, const Vec3& b);
Vec3 cross(const Vec3& a, const Vec3& b);
double norm(const Vec3& a);
double determinant(const Mat3& m);
Mat3 matmul(const Mat3& a, const Mat3& b);
Mat3 transpose(const Mat3& m);

struct CrystalStructure {
  std::string id;
  std::vector<int> atomic_numbers;
  std::vector<Vec3> frac_coords;
  Mat3 lattice{};
  std::map<std::string, std::optional<double>> labels;

  std::size_t num_atoms() const { return atomic_numbers.size(); }
};

Vec3 frac_to_cart(const Mat3& lattice, const Vec3& frac);
Vec3 cart_to_frac(const Mat3& lattice, const Vec3& cart);

/// Componentwise f - floor(f). The result is strictly inside [0, 1): values
/// that round up to 1.0 are folded back to 0.0.
Vec3 wrap_fractional(const Vec3& frac);

/// Signed volume l1 . (l2 x l3); throws LatticeDegenerate when |V| <= eps.
double checked_volume(const Mat3& lattice, double volume_eps = kDefaultVolumeEpsilon);

struct FrequencyIndex {
  IVec3 n{};

  friend bool operator==(const FrequencyIndex&, const FrequencyIndex&) = default;
  friend auto operator<=>(const FrequencyIndex&, const FrequencyIndex&) = default;
};

/// All integer triples with max|n_i| <= kmax in lexicographic order.
std::vector<FrequencyIndex> enumerate_frequencies(int kmax, bool include_zero = false);

struct ReciprocalBasis {
  Mat3 b{};             // rows b1, b2, b3 (1/Angstrom)
  double volume = 0.0;  // |l1 . (l2 x l3)|
  bool right_handed = true;
  std::vector<FrequencyIndex> frequencies;

  Vec3 k_vector(const FrequencyIndex& f) const;
  double k_norm(const FrequencyIndex& f) const;
};

ReciprocalBasis reciprocal_basis(const Mat3& lattice, int kmax, bool include_zero = false);

enum class ViolationKind {
  LatticeDegenerate,
  NonFiniteLattice,
  NonFiniteCoordinate,
  InvalidAtomicNumber,
  CountMismatch,
  EmptyStructure,
};

const char* to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  std::string field;
  std::string reason;
};

std::vector<Violation> validate_structure(const CrystalStructure& s,
                                          double volume_eps = kDefaultVolumeEpsilon);

/// Returns a copy with every fractional coordinate wrapped into [0, 1).
CrystalStructure wrapped(CrystalStructure s);

}  // namespace regnet
