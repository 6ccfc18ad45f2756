#include "regnet/reciprocal.hpp"

#include <cmath>
#include <numbers>

#include "regnet/error.hpp"

namespace regnet {

ReciprocalBatch make_reciprocal_batch(const std::vector<ReciprocalInput>& structures) {
  auto cos_op = std::make_shared<ad::BlockOperator>();
  auto sin_op = std::make_shared<ad::BlockOperator>();
  ReciprocalBatch batch;
  std::size_t atom_offset = 0;
  std::size_t freq_offset = 0;
  for (const auto& s : structures) {
    if (s.frac_coords == nullptr || s.basis == nullptr) raise(ErrorKind::ConfigError, "incomplete reciprocal input");
    const auto& f = *s.frac_coords;
    const auto& freqs = s.basis->frequencies;
    const std::size_t n = f.size();
    const std::size_t m = freqs.size();
    ad::BlockOperator::Block cb{freq_offset, m, atom_offset, n, std::vector<double>(m * n)};
    ad::BlockOperator::Block sb{freq_offset, m, atom_offset, n, std::vector<double>(m * n)};
    for (std::size_t k = 0; k < m; ++k) {
      const auto& idx = freqs[k].n;
      for (std::size_t j = 0; j < n; ++j) {
        const double phase = 2.0 * std::numbers::pi * (idx[0] * f[j][0] + idx[1] * f[j][1] + idx[2] * f[j][2]);
        cb.matrix[k * n + j] = std::cos(phase);
        sb.matrix[k * n + j] = std::sin(phase);
      }
      batch.k_norm.push_back(s.basis->k_norm(freqs[k]));
      batch.frequency_slot.push_back(k);
    }
    cos_op->blocks.push_back(std::move(cb));
    sin_op->blocks.push_back(std::move(sb));
    atom_offset += n;
    freq_offset += m;
  }
  cos_op->in_rows = sin_op->in_rows = atom_offset;
  cos_op->out_rows = sin_op->out_rows = freq_offset;
  batch.cos_phase = std::move(cos_op);
  batch.sin_phase = std::move(sin_op);
  batch.num_atoms = atom_offset;
  batch.num_frequency_rows = freq_offset;
  return batch;
}

ReciprocalBatch make_reciprocal_batch(const std::vector<Vec3>& frac_coords, const ReciprocalBasis& basis) {
  return make_reciprocal_batch(std::vector<ReciprocalInput>{{&frac_coords, &basis}});
}

StructureFactorSet structure_factors(const DiffValue& h_global, const ReciprocalBatch& batch) {
  if (h_global.rows() != batch.num_atoms) {
    raise(ErrorKind::ShapeError, "structure_factors: " + std::to_string(h_global.rows()) + " rows for " +
                                     std::to_string(batch.num_atoms) + " atoms");
  }
  return {ad::block_matmul(batch.cos_phase, h_global),
          ad::scale(ad::block_matmul(batch.sin_phase, h_global), -1.0)};
}

DiffValue inverse_filtered(const StructureFactorSet& r, const ReciprocalBatch& batch, const DiffValue& filter) {
  const std::size_t m = batch.num_frequency_rows;
  if (r.real.rows() != m || r.imag.rows() != m || filter.rows() != m) {
    raise(ErrorKind::FrequencyMismatch, "structure factors, filter and phase tables use different frequency sets");
  }
  if (!(r.real.shape() == filter.shape()) || !(r.imag.shape() == filter.shape())) {
    raise(ErrorKind::ShapeError, "filter width does not match the structure factors");
  }
  const DiffValue re = ad::block_matmul(batch.cos_phase, ad::mul(filter, r.real), true);
  const DiffValue im = ad::block_matmul(batch.sin_phase, ad::mul(filter, r.imag), true);
  return ad::sub(re, im);
}

ReciprocalFilter::ReciprocalFilter(ParameterStore& store, Initializer& init, const std::string& name,
                                   FilterMode mode, std::size_t hidden, std::size_t filter_hidden,
                                   std::size_t num_slots, double init_scale)
    : mode_(mode), hidden_(hidden) {
  if (mode == FilterMode::ContinuousMlp) {
    mlp_ = Mlp2(store, init, name + ".mlp", 1, filter_hidden, hidden, init_scale);
  } else {
    if (num_slots == 0) raise(ErrorKind::ConfigError, "per-index filter needs a non-empty frequency set");
    table_ = store.add(name + ".table", {num_slots, hidden}, init.uniform(num_slots * hidden, init_scale));
  }
}

DiffValue ReciprocalFilter::operator()(const ReciprocalBatch& batch) const {
  const std::size_t m = batch.num_frequency_rows;
  if (mode_ == FilterMode::ContinuousMlp) {
    return mlp_(DiffValue::constant({m, 1}, batch.k_norm));
  }
  for (std::size_t slot : batch.frequency_slot) {
    if (slot >= table_.rows()) {
      raise(ErrorKind::FrequencyMismatch, "frequency slot " + std::to_string(slot) + " exceeds the filter table");
    }
  }
  return ad::gather_rows(table_, batch.frequency_slot);
}

ReciprocalBlock::ReciprocalBlock(ParameterStore& store, Initializer& init, const std::string& name, FilterMode mode,
                                 std::size_t hidden, std::size_t filter_hidden, std::size_t num_slots,
                                 double init_scale)
    : filter_(store, init, name + ".filter", mode, hidden, filter_hidden, num_slots, init_scale) {}

DiffValue ReciprocalBlock::contribution(const DiffValue& h_global, const ReciprocalBatch& batch) const {
  return inverse_filtered(structure_factors(h_global, batch), batch, filter_(batch));
}

DiffValue ReciprocalBlock::operator()(const DiffValue& h_global, const ReciprocalBatch& batch) const {
  return ad::add(h_global, contribution(h_global, batch));
}

}  // namespace regnet
