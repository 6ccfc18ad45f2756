#pragma once

#include <cstddef>
#include <vector>

#include "regnet/crystal.hpp"

namespace regnet {

/// Directed edge from node `src` to the periodic image `image` of node `dst`.
/// distance = |p_dst + image . L - p_src|.
struct PeriodicEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  IVec3 image{};
  double distance = 0.0;
};

struct PeriodicGraph {
  std::size_t num_nodes = 0;
  std::vector<PeriodicEdge> edges;  // sorted by (src, distance, dst, image)
  std::vector<double> per_node_radius;
};

struct NeighborOptions {
  double distance_eps = kDefaultDistanceEpsilon;
  // Absolute slack used when comparing a distance against a radius so that
  // symmetry-equivalent neighbors at the same nominal distance are all kept.
  double tie_tolerance = 1e-9;
};

/// Distance from every atom to its k-th nearest periodic neighbor, counting
/// images with multiplicity and excluding the atom's own (0,0,0) image.
std::vector<double> knn_radius(const CrystalStructure& s, int k, const NeighborOptions& opts = {});

/// Radius graph with per-node cutoff radius_scale * knn_radius(s, k)[i]. An edge
/// (i, j, n) is present whenever the pair lies inside the cutoff of either
/// endpoint, so every edge has its reverse (j, i, -n).
PeriodicGraph build_graph(const CrystalStructure& s, int k, double radius_scale = 1.0,
                          const NeighborOptions& opts = {});

/// Recomputes |(f_dst + image - f_src) L| from the definition.
double image_distance(const CrystalStructure& s, std::size_t src, std::size_t dst, const IVec3& image);

}  // namespace regnet
