#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "regnet/crystal.hpp"

namespace regnet {

struct SyntheticOptions {
  std::size_t count = 64;
  std::size_t min_atoms = 1;
  std::size_t max_atoms = 6;
  double min_length = 3.0;   // lattice vector lengths, Angstrom
  double max_length = 6.0;
  double min_separation = 1.2;
  std::vector<int> elements{3, 8, 11, 12, 13, 14, 16, 17, 20, 26};
  std::vector<std::string> tasks{"formation_energy"};
  double missing_fraction = 0.0;  // per-label drop probability (first task always kept)
  std::uint64_t seed = 0;
};

/// Random triclinic lattice with lengths in [min_length, max_length] and
/// angles in [70, 110] degrees.
Mat3 random_lattice(std::mt19937_64& rng, double min_length, double max_length);

/// Random crystals labelled by smooth functions of composition and geometry,
/// so that a graph model can fit them. Deterministic in the seed.
std::vector<CrystalStructure> synthetic_dataset(const SyntheticOptions& opts);

}  // namespace regnet
