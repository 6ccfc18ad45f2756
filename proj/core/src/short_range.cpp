#include "regnet/short_range.hpp"

#include "regnet/error.hpp"

namespace regnet {

LocalLayer::LocalLayer(ParameterStore& store, Initializer& init, const std::string& name, std::size_t hidden,
                       Aggregation aggregation)
    : hidden_(hidden),
      aggregation_(aggregation),
      msg_(store, init, name + ".msg", 3 * hidden, hidden, hidden),
      gate_(store, init, name + ".gate", 3 * hidden, hidden, hidden),
      bn_gate_(store, name + ".bn_gate", hidden),
      bn_msg_(store, name + ".bn_msg", hidden) {}

DiffValue LocalLayer::edge_input(const DiffValue& h, const EdgeIndex& edges, const DiffValue& edge_features) const {
  if (h.cols() != hidden_ || edge_features.cols() != hidden_) {
    raise(ErrorKind::ShapeError, "local layer expects width " + std::to_string(hidden_));
  }
  if (edges.src.size() != edges.dst.size() || edge_features.rows() != edges.size()) {
    raise(ErrorKind::ShapeError, "edge index and edge features disagree on the edge count");
  }
  const DiffValue parts[] = {ad::gather_rows(h, edges.src), ad::gather_rows(h, edges.dst), edge_features};
  return ad::concat_cols(parts);
}

DiffValue LocalLayer::gate(const DiffValue& h, const EdgeIndex& edges, const DiffValue& edge_features,
                           bool training) const {
  return ad::sigmoid(bn_gate_(gate_(edge_input(h, edges, edge_features)), training));
}

DiffValue LocalLayer::operator()(const DiffValue& h, const EdgeIndex& edges, const DiffValue& edge_features,
                                 bool training) const {
  const std::size_t n = h.rows();
  DiffValue aggregated;
  if (edges.size() == 0) {
    aggregated = DiffValue::constant({n, hidden_}, 0.0);
  } else {
    const DiffValue z = edge_input(h, edges, edge_features);
    const DiffValue beta = ad::sigmoid(bn_gate_(gate_(z), training));
    const DiffValue messages = ad::mul(beta, msg_(z));
    aggregated = aggregation_ == Aggregation::Sum ? ad::segment_sum(messages, edges.src, n)
                                                  : ad::segment_mean(messages, edges.src, n);
  }
  return ad::relu(ad::add(h, bn_msg_(aggregated, training)));
}

}  // namespace regnet
