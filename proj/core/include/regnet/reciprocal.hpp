#pragma once

// Long-range message passing in reciprocal space.
//
// For each structure with fractional coordinates f_j and frequency set {n}:
//
//   r(n)  = sum_j h_j exp(-i 2 pi n.f_j)                 (structure factor)
//   h~_j  = sum_n w(n) * Re[exp(+i 2 pi n.f_j) r(n)]     (filtered inverse)
//   h'_j  = h_j + h~_j
//
// Complex values are carried as separate real and imaginary channels. The
// filter w(n) is learned either as a small MLP of |k(n)| or as a free table
// indexed by frequency slot. Phases 2 pi n.f are periodic in f, so the block
// is invariant to lattice translations and to wrapping of coordinates.

#include <memory>
#include <string>
#include <vector>

#include "regnet/crystal.hpp"
#include "regnet/nn.hpp"

namespace regnet {

/// Phase operators for a batch of structures stacked row-wise. Row m of
/// cos_phase/sin_phase is frequency slot m of some structure; its columns are
/// that structure's atoms in batch numbering.
struct ReciprocalBatch {
  std::shared_ptr<const ad::BlockOperator> cos_phase;
  std::shared_ptr<const ad::BlockOperator> sin_phase;
  std::vector<double> k_norm;               // per frequency row, 1/Angstrom
  std::vector<std::size_t> frequency_slot;  // per frequency row, index into the structure's set
  std::size_t num_atoms = 0;
  std::size_t num_frequency_rows = 0;
};

struct ReciprocalInput {
  const std::vector<Vec3>* frac_coords = nullptr;
  const ReciprocalBasis* basis = nullptr;
};

ReciprocalBatch make_reciprocal_batch(const std::vector<ReciprocalInput>& structures);
ReciprocalBatch make_reciprocal_batch(const std::vector<Vec3>& frac_coords, const ReciprocalBasis& basis);

struct StructureFactorSet {
  DiffValue real;  // frequency rows x d
  DiffValue imag;
};

StructureFactorSet structure_factors(const DiffValue& h_global, const ReciprocalBatch& batch);

/// Real part of the filtered inverse transform, one row per atom.
DiffValue inverse_filtered(const StructureFactorSet& r, const ReciprocalBatch& batch, const DiffValue& filter);

enum class FilterMode { ContinuousMlp, PerIndexTable };

class ReciprocalFilter {
 public:
  ReciprocalFilter() = default;
  /// `num_slots` sizes the table in PerIndexTable mode. `init_scale` shrinks the
  /// output layer so the initial long-range contribution is close to zero.
  ReciprocalFilter(ParameterStore& store, Initializer& init, const std::string& name, FilterMode mode,
                   std::size_t hidden, std::size_t filter_hidden, std::size_t num_slots, double init_scale);

  /// Filter weights, one row per frequency row of the batch.
  DiffValue operator()(const ReciprocalBatch& batch) const;
  FilterMode mode() const { return mode_; }

 private:
  FilterMode mode_ = FilterMode::ContinuousMlp;
  std::size_t hidden_ = 0;
  Mlp2 mlp_;
  DiffValue table_;
};

class ReciprocalBlock {
 public:
  ReciprocalBlock() = default;
  ReciprocalBlock(ParameterStore& store, Initializer& init, const std::string& name, FilterMode mode,
                  std::size_t hidden, std::size_t filter_hidden, std::size_t num_slots, double init_scale);

  /// h + inverse_filtered(structure_factors(h)).
  DiffValue operator()(const DiffValue& h_global, const ReciprocalBatch& batch) const;
  /// The long-range update alone, without the residual.
  DiffValue contribution(const DiffValue& h_global, const ReciprocalBatch& batch) const;

  const ReciprocalFilter& filter() const { return filter_; }

 private:
  ReciprocalFilter filter_;
};

}  // namespace regnet
