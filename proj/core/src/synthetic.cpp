#include "regnet/synthetic.hpp"

#include <cmath>
#include <numbers>

#include "regnet/error.hpp"
#include "regnet/periodic_graph.hpp"

namespace regnet {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  // 53-bit mantissa from the raw generator; identical across standard libraries.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

double min_image_distance(const Mat3& lattice, const Vec3& a, const Vec3& b) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = -1; i <= 1; ++i)
    for (int j = -1; j <= 1; ++j)
      for (int k = -1; k <= 1; ++k) {
        const Vec3 df{b[0] - a[0] + i, b[1] - a[1] + j, b[2] - a[2] + k};
        best = std::min(best, norm(frac_to_cart(lattice, df)));
      }
  return best;
}

double element_energy(int z) { return -0.5 + 0.8 * std::sin(0.37 * z) + 0.01 * z; }

double task_label(std::size_t task, const CrystalStructure& s) {
  const std::size_t n = s.num_atoms();
  const double volume = checked_volume(s.lattice);
  double comp = 0.0, z_mean = 0.0, z_sq = 0.0;
  for (int z : s.atomic_numbers) {
    comp += element_energy(z);
    z_mean += z;
    z_sq += static_cast<double>(z) * z;
  }
  comp /= static_cast<double>(n);
  z_mean /= static_cast<double>(n);
  const double z_spread = std::sqrt(std::max(0.0, z_sq / static_cast<double>(n) - z_mean * z_mean));
  // Pair term: mean over atoms of a smooth function of nearest-neighbour distance.
  const std::vector<double> r1 = knn_radius(s, 1);
  double pair = 0.0;
  for (double r : r1) pair += std::exp(-(r - 2.0) * (r - 2.0));
  pair /= static_cast<double>(n);
  const double density = static_cast<double>(n) / volume;
  switch (task % 3) {
    case 0:
      return comp + 0.6 * pair - 4.0 * density;
    case 1:
      return 0.05 * z_spread + 1.5 * density * volume / (n + 1.0) - 0.4 * pair;
    default:
      return std::log(1.0 + 40.0 * density) + 0.2 * comp;
  }
}

}  // namespace

Mat3 random_lattice(std::mt19937_64& rng, double min_length, double max_length) {
  const double a = uniform(rng, min_length, max_length);
  const double b = uniform(rng, min_length, max_length);
  const double c = uniform(rng, min_length, max_length);
  const double deg = std::numbers::pi / 180.0;
  const double alpha = uniform(rng, 70.0, 110.0) * deg;
  const double beta = uniform(rng, 70.0, 110.0) * deg;
  const double gamma = uniform(rng, 70.0, 110.0) * deg;
  const double cx = c * std::cos(beta);
  const double cy = c * (std::cos(alpha) - std::cos(beta) * std::cos(gamma)) / std::sin(gamma);
  const double cz2 = c * c - cx * cx - cy * cy;
  const double cz = std::sqrt(std::max(cz2, 0.25 * c * c));
  return Mat3{Vec3{a, 0.0, 0.0}, Vec3{b * std::cos(gamma), b * std::sin(gamma), 0.0}, Vec3{cx, cy, cz}};
}

std::vector<CrystalStructure> synthetic_dataset(const SyntheticOptions& opts) {
  if (opts.min_atoms < 1 || opts.max_atoms < opts.min_atoms) raise(ErrorKind::ConfigError, "invalid atom count range");
  if (opts.elements.empty() || opts.tasks.empty()) raise(ErrorKind::ConfigError, "elements and tasks must be non-empty");
  std::mt19937_64 rng(opts.seed);
  std::vector<CrystalStructure> out;
  for (std::size_t i = 0; i < opts.count; ++i) {
    CrystalStructure s;
    s.id = "synth-" + std::to_string(i);
    s.lattice = random_lattice(rng, opts.min_length, opts.max_length);
    const std::size_t span = opts.max_atoms - opts.min_atoms + 1;
    const std::size_t n = opts.min_atoms + static_cast<std::size_t>(rng() % span);
    for (std::size_t a = 0; a < n; ++a) {
      // Rejection sampling against periodic overlaps; give up on crowded cells.
      for (int attempt = 0; attempt < 200; ++attempt) {
        const Vec3 f{uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0)};
        bool ok = true;
        for (const auto& g : s.frac_coords) ok = ok && min_image_distance(s.lattice, f, g) >= opts.min_separation;
        if (ok) {
          s.frac_coords.push_back(f);
          s.atomic_numbers.push_back(opts.elements[rng() % opts.elements.size()]);
          break;
        }
      }
    }
    for (std::size_t t = 0; t < opts.tasks.size(); ++t) {
      const bool drop = t > 0 && uniform(rng, 0.0, 1.0) < opts.missing_fraction;
      s.labels[opts.tasks[t]] = drop ? std::nullopt : std::optional<double>(task_label(t, s));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace regnet
