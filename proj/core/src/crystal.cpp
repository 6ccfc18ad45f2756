#include "regnet/crystal.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "regnet/error.hpp"

namespace regnet {

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

double determinant(const Mat3& m) { return dot(m[0], cross(m[1], m[2])); }

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

Mat3 transpose(const Mat3& m) {
  Mat3 t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = m[j][i];
  return t;
}

double checked_volume(const Mat3& lattice, double volume_eps) {
  const double v = determinant(lattice);
  if (!std::isfinite(v) || std::abs(v) <= volume_eps) {
    std::ostringstream msg;
    msg << "lattice volume " << v << " is below " << volume_eps;
    raise(ErrorKind::LatticeDegenerate, msg.str());
  }
  return v;
}

Vec3 frac_to_cart(const Mat3& lattice, const Vec3& frac) {
  checked_volume(lattice);
  Vec3 p{};
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) p[c] += frac[i] * lattice[i][c];
  return p;
}

Vec3 cart_to_frac(const Mat3& lattice, const Vec3& cart) {
  // f_i = (l_j x l_k) . p / V, i.e. projection on the dual basis.
  const double v = checked_volume(lattice);
  return {dot(cross(lattice[1], lattice[2]), cart) / v,
          dot(cross(lattice[2], lattice[0]), cart) / v,
          dot(cross(lattice[0], lattice[1]), cart) / v};
}

Vec3 wrap_fractional(const Vec3& frac) {
  Vec3 out{};
  for (int i = 0; i < 3; ++i) {
    if (!std::isfinite(frac[i])) {
      raise(ErrorKind::NonFiniteCoordinate, "fractional coordinate is not finite");
    }
    double w = frac[i] - std::floor(frac[i]);
    if (w >= 1.0) w = 0.0;  // -1e-18 - floor(-1e-18) rounds to exactly 1
    out[i] = w;
  }
  return out;
}

std::vector<FrequencyIndex> enumerate_frequencies(int kmax, bool include_zero) {
  if (kmax < 0) raise(ErrorKind::ConfigError, "kmax must be non-negative");
  std::vector<FrequencyIndex> out;
  for (int a = -kmax; a <= kmax; ++a)
    for (int b = -kmax; b <= kmax; ++b)
      for (int c = -kmax; c <= kmax; ++c) {
        if (!include_zero && a == 0 && b == 0 && c == 0) continue;
        out.push_back({{a, b, c}});
      }
  return out;
}

Vec3 ReciprocalBasis::k_vector(const FrequencyIndex& f) const {
  Vec3 k{};
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) k[c] += f.n[i] * b[i][c];
  return k;
}

double ReciprocalBasis::k_norm(const FrequencyIndex& f) const { return norm(k_vector(f)); }

ReciprocalBasis reciprocal_basis(const Mat3& lattice, int kmax, bool include_zero) {
  const double v = checked_volume(lattice);
  const double scale = 2.0 * std::numbers::pi / v;
  ReciprocalBasis basis;
  // The signed volume keeps l_i . b_j = 2 pi delta_ij for left-handed cells.
  const Vec3 c0 = cross(lattice[1], lattice[2]);
  const Vec3 c1 = cross(lattice[2], lattice[0]);
  const Vec3 c2 = cross(lattice[0], lattice[1]);
  for (int c = 0; c < 3; ++c) {
    basis.b[0][c] = scale * c0[c];
    basis.b[1][c] = scale * c1[c];
    basis.b[2][c] = scale * c2[c];
  }
  basis.volume = std::abs(v);
  basis.right_handed = v > 0.0;
  basis.frequencies = enumerate_frequencies(kmax, include_zero);
  return basis;
}

const char* to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::LatticeDegenerate: return "LatticeDegenerate";
    case ViolationKind::NonFiniteLattice: return "NonFiniteLattice";
    case ViolationKind::NonFiniteCoordinate: return "NonFiniteCoordinate";
    case ViolationKind::InvalidAtomicNumber: return "InvalidAtomicNumber";
    case ViolationKind::CountMismatch: return "CountMismatch";
    case ViolationKind::EmptyStructure: return "EmptyStructure";
  }
  return "Unknown";
}

std::vector<Violation> validate_structure(const CrystalStructure& s, double volume_eps) {
  std::vector<Violation> out;
  bool finite_lattice = true;
  for (const auto& row : s.lattice)
    for (double x : row) finite_lattice = finite_lattice && std::isfinite(x);
  if (!finite_lattice) {
    out.push_back({ViolationKind::NonFiniteLattice, "lattice", "lattice has non-finite entries"});
  } else {
    const double v = determinant(s.lattice);
    if (std::abs(v) <= volume_eps) {
      std::ostringstream msg;
      msg << "|det(L)| = " << std::abs(v) << " <= " << volume_eps;
      out.push_back({ViolationKind::LatticeDegenerate, "lattice", msg.str()});
    }
  }
  if (s.atomic_numbers.empty()) {
    out.push_back({ViolationKind::EmptyStructure, "atomic_numbers", "structure has no atoms"});
  }
  if (s.atomic_numbers.size() != s.frac_coords.size()) {
    std::ostringstream msg;
    msg << s.atomic_numbers.size() << " atomic numbers vs " << s.frac_coords.size()
        << " coordinate rows";
    out.push_back({ViolationKind::CountMismatch, "frac_coords", msg.str()});
  }
  for (std::size_t i = 0; i < s.atomic_numbers.size(); ++i) {
    if (s.atomic_numbers[i] <= 0) {
      std::ostringstream msg;
      msg << "atom " << i << " has Z = " << s.atomic_numbers[i];
      out.push_back({ViolationKind::InvalidAtomicNumber, "atomic_numbers", msg.str()});
    }
  }
  for (std::size_t i = 0; i < s.frac_coords.size(); ++i) {
    for (double x : s.frac_coords[i]) {
      if (!std::isfinite(x)) {
        std::ostringstream msg;
        msg << "atom " << i << " has a non-finite fractional coordinate";
        out.push_back({ViolationKind::NonFiniteCoordinate, "frac_coords", msg.str()});
        break;
      }
    }
  }
  return out;
}

CrystalStructure wrapped(CrystalStructure s) {
  for (auto& f : s.frac_coords) f = wrap_fractional(f);
  return s;
}

}  // namespace regnet
