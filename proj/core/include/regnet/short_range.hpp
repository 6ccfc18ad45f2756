#pragma once

#include <string>
#include <vector>

#include "regnet/nn.hpp"

namespace regnet {

enum class Aggregation { Sum, Mean };

/// Edge endpoints in batch-global node numbering. Messages along edge e are
/// aggregated into node src[e]; dst[e] is the neighbor.
struct EdgeIndex {
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;

  std::size_t size() const { return src.size(); }
};

/// One gated message-passing layer:
///   z_ij  = [h_i | h_j | v_ij]
///   beta  = sigmoid(BN(gate_mlp(z)))
///   m_ij  = beta * msg_mlp(z)
///   h_i'  = relu(h_i + BN(aggregate_j m_ij))
class LocalLayer {
 public:
  LocalLayer() = default;
  LocalLayer(ParameterStore& store, Initializer& init, const std::string& name, std::size_t hidden,
             Aggregation aggregation = Aggregation::Sum);

  DiffValue operator()(const DiffValue& h, const EdgeIndex& edges, const DiffValue& edge_features,
                       bool training) const;

  /// Per-edge gate coefficients beta in (0, 1).
  DiffValue gate(const DiffValue& h, const EdgeIndex& edges, const DiffValue& edge_features,
                 bool training) const;

  Aggregation aggregation() const { return aggregation_; }

 private:
  DiffValue edge_input(const DiffValue& h, const EdgeIndex& edges, const DiffValue& edge_features) const;

  std::size_t hidden_ = 0;
  Aggregation aggregation_ = Aggregation::Sum;
  Mlp2 msg_;
  Mlp2 gate_;
  BatchNorm bn_gate_;
  BatchNorm bn_msg_;
};

}  // namespace regnet
