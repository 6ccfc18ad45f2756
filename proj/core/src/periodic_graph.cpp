#include "regnet/periodic_graph.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <tuple>

#include "regnet/error.hpp"

namespace regnet {
namespace {

struct Neighbor {
  std::size_t dst;
  IVec3 image;  // relative to the wrapped coordinates
  double distance;
};

// Geometry shared by the shell searches: wrapped Cartesian positions and the
// smallest interplanar spacing, which bounds how close any atom in image shell
// s can be: every image with max|n_a| = s lies farther than (s - 1) * spacing.
class ShellSearch {
 public:
  ShellSearch(const CrystalStructure& s, const NeighborOptions& opts) : s_(s), opts_(opts) {
    const double v = std::abs(checked_volume(s.lattice));
    spacing_ = std::min({v / norm(cross(s.lattice[1], s.lattice[2])),
                         v / norm(cross(s.lattice[2], s.lattice[0])),
                         v / norm(cross(s.lattice[0], s.lattice[1]))});
    if (s.atomic_numbers.empty()) raise(ErrorKind::ValidationError, "structure has no atoms");
    cart_.reserve(s.frac_coords.size());
    shift_.reserve(s.frac_coords.size());
    for (const auto& f : s.frac_coords) {
      const Vec3 w = wrap_fractional(f);
      cart_.push_back(frac_to_cart(s.lattice, w));
      shift_.push_back({static_cast<int>(std::lround(f[0] - w[0])),
                        static_cast<int>(std::lround(f[1] - w[1])),
                        static_cast<int>(std::lround(f[2] - w[2]))});
    }
  }

  std::size_t size() const { return cart_.size(); }

  // Appends all neighbors of `src` in image shell `shell`.
  void visit_shell(std::size_t src, int shell, std::vector<Neighbor>& out) const {
    auto emit = [&](const IVec3& n) {
      Vec3 offset{};
      for (int a = 0; a < 3; ++a)
        for (int c = 0; c < 3; ++c) offset[c] += n[a] * s_.lattice[a][c];
      for (std::size_t dst = 0; dst < cart_.size(); ++dst) {
        if (shell == 0 && dst == src) continue;
        Vec3 d{};
        for (int c = 0; c < 3; ++c) d[c] = cart_[dst][c] + offset[c] - cart_[src][c];
        const double dist = norm(d);
        if (dist < opts_.distance_eps) {
          std::ostringstream msg;
          msg << "atoms " << src << " and " << dst << " overlap (distance " << dist << ")";
          raise(ErrorKind::AtomOverlap, msg.str());
        }
        out.push_back({dst, n, dist});
      }
    };
    for (int a = -shell; a <= shell; ++a)
      for (int b = -shell; b <= shell; ++b)
        for (int c = -shell; c <= shell; ++c) {
          if (std::max({std::abs(a), std::abs(b), std::abs(c)}) != shell) continue;
          emit({a, b, c});
        }
  }

  // Lower bound on the distance of anything in shells strictly beyond `shell`.
  double bound_beyond(int shell) const { return shell * spacing_; }

  // Image index expressed against the caller's (possibly unwrapped) coordinates.
  IVec3 unwrapped_image(std::size_t src, std::size_t dst, const IVec3& n) const {
    return {n[0] - shift_[dst][0] + shift_[src][0], n[1] - shift_[dst][1] + shift_[src][1],
            n[2] - shift_[dst][2] + shift_[src][2]};
  }

  double kth_distance(std::size_t src, int k) const {
    std::vector<Neighbor> found;
    std::vector<double> dists;
    for (int shell = 0;; ++shell) {
      visit_shell(src, shell, found);
      if (static_cast<int>(found.size()) >= k) {
        dists.resize(found.size());
        std::transform(found.begin(), found.end(), dists.begin(),
                       [](const Neighbor& nb) { return nb.distance; });
        std::nth_element(dists.begin(), dists.begin() + (k - 1), dists.end());
        const double kth = dists[k - 1];
        if (kth <= bound_beyond(shell)) return kth;
      }
    }
  }

  std::vector<Neighbor> within(std::size_t src, double cutoff) const {
    std::vector<Neighbor> found;
    std::vector<Neighbor> kept;
    for (int shell = 0;; ++shell) {
      found.clear();
      visit_shell(src, shell, found);
      for (const auto& nb : found)
        if (nb.distance <= cutoff) kept.push_back(nb);
      if (bound_beyond(shell) > cutoff) return kept;
    }
  }

 private:
  const CrystalStructure& s_;
  NeighborOptions opts_;
  double spacing_ = 0.0;
  std::vector<Vec3> cart_;
  std::vector<IVec3> shift_;
};

}  // namespace

double image_distance(const CrystalStructure& s, std::size_t src, std::size_t dst, const IVec3& image) {
  Vec3 g{};
  for (int a = 0; a < 3; ++a) g[a] = s.frac_coords[dst][a] + image[a] - s.frac_coords[src][a];
  Vec3 p{};
  for (int a = 0; a < 3; ++a)
    for (int c = 0; c < 3; ++c) p[c] += g[a] * s.lattice[a][c];
  return norm(p);
}

std::vector<double> knn_radius(const CrystalStructure& s, int k, const NeighborOptions& opts) {
  if (k < 1) raise(ErrorKind::ConfigError, "k must be >= 1");
  ShellSearch search(s, opts);
  std::vector<double> radius(search.size());
  for (std::size_t i = 0; i < search.size(); ++i) radius[i] = search.kth_distance(i, k);
  return radius;
}

PeriodicGraph build_graph(const CrystalStructure& s, int k, double radius_scale,
                          const NeighborOptions& opts) {
  if (k < 1) raise(ErrorKind::ConfigError, "k must be >= 1");
  if (!(radius_scale >= 1.0)) raise(ErrorKind::ConfigError, "radius_scale must be >= 1");
  ShellSearch search(s, opts);
  PeriodicGraph graph;
  graph.num_nodes = search.size();
  graph.per_node_radius.resize(search.size());
  for (std::size_t i = 0; i < search.size(); ++i) graph.per_node_radius[i] = search.kth_distance(i, k);

  std::vector<PeriodicEdge> edges;
  for (std::size_t i = 0; i < search.size(); ++i) {
    const double cutoff = radius_scale * graph.per_node_radius[i] + opts.tie_tolerance;
    for (const auto& nb : search.within(i, cutoff)) {
      const IVec3 img = search.unwrapped_image(i, nb.dst, nb.image);
      edges.push_back({i, nb.dst, img, nb.distance});
      edges.push_back({nb.dst, i, {-img[0], -img[1], -img[2]}, nb.distance});
    }
  }
  auto key = [](const PeriodicEdge& e) { return std::tie(e.src, e.dst, e.image); };
  std::sort(edges.begin(), edges.end(),
            [&](const PeriodicEdge& a, const PeriodicEdge& b) { return key(a) < key(b); });
  edges.erase(std::unique(edges.begin(), edges.end(),
                          [&](const PeriodicEdge& a, const PeriodicEdge& b) { return key(a) == key(b); }),
              edges.end());
  // A pair found from both endpoints carries two slightly different roundings
  // of the same distance; recompute once so reverse edges agree exactly.
  for (auto& e : edges) {
    const IVec3 rev{-e.image[0], -e.image[1], -e.image[2]};
    e.distance = std::min(image_distance(s, e.src, e.dst, e.image), image_distance(s, e.dst, e.src, rev));
  }
  std::sort(edges.begin(), edges.end(), [](const PeriodicEdge& a, const PeriodicEdge& b) {
    return std::tie(a.src, a.distance, a.dst, a.image) < std::tie(b.src, b.distance, b.dst, b.image);
  });
  graph.edges = std::move(edges);
  return graph;
}

}  // namespace regnet
