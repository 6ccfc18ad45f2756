#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "regnet/crystal.hpp"

namespace regnet {

// JSON-lines record, one structure per line:
//   {"id": "...", "lattice": [[..],[..],[..]], "frac_coords": [[..], ...],
//    "atomic_numbers": [..], "targets": {"prop": value | null, ...}}
// Lattice rows are the lattice vectors in Angstrom.

struct LoadIssue {
  std::size_t line = 0;
  std::string id;
  std::string message;
};

struct LoadResult {
  std::vector<CrystalStructure> records;
  std::vector<LoadIssue> issues;  // records skipped in non-strict mode
};

/// Strict mode throws ParseError/ValidationError on the first bad record;
/// otherwise bad records are skipped and listed in `issues`.
LoadResult load_dataset(const std::string& path, bool strict = true);
LoadResult parse_dataset(std::istream& in, bool strict = true);

/// Parses a single record line (without validation beyond the schema).
CrystalStructure parse_record(const std::string& line, std::size_t line_number = 0);
std::string serialize_record(const CrystalStructure& s);

void write_dataset(const std::string& path, const std::vector<CrystalStructure>& records);

struct SplitSpec {
  // Either ratios (fractions of the dataset) or absolute counts.
  std::optional<std::size_t> train_count, val_count, test_count;
  double train_ratio = 0.8;
  double val_ratio = 0.1;
  double test_ratio = 0.1;
  std::uint64_t seed = 0;

  bool uses_counts() const { return train_count.has_value(); }
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Deterministic shuffle of 0..n-1 (Fisher-Yates over mt19937_64), identical
/// across standard libraries.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

SplitIndices split_indices(std::size_t n, const SplitSpec& spec);

}  // namespace regnet
