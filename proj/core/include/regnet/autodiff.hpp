#pragma once

// Minimal reverse-mode differentiation over dense row-major 2-D arrays.
//
// Every value is a matrix (scalars are 1x1). Operations build a DAG of
// reference-counted nodes; backward() walks it once in reverse topological
// order. Leaves created with requires_grad accumulate gradients across calls,
// interior nodes are reset on every backward pass.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace regnet::ad {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

struct Node;

class DiffValue {
 public:
  DiffValue() = default;

  static DiffValue constant(Shape shape, std::vector<double> data);
  static DiffValue constant(Shape shape, double fill = 0.0);
  static DiffValue leaf(Shape shape, std::vector<double> data, bool requires_grad = true);
  static DiffValue scalar(double v) { return constant({1, 1}, std::vector<double>{v}); }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rows() const { return shape().rows; }
  std::size_t cols() const { return shape().cols; }
  bool requires_grad() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();  // only meaningful for leaves
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }
  double item() const;

  /// Gradient accumulator; empty span until a backward pass reaches this node.
  std::span<const double> grad() const;
  bool has_grad() const;
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& handle() const { return node_; }

 private:
  friend DiffValue make_result(Shape, std::vector<double>, std::vector<DiffValue>,
                               std::function<void(Node&)>);
  explicit DiffValue(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<DiffValue> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

/// Builds a result node. Records parents and the backward closure only when
/// gradient recording is enabled and some parent requires a gradient.
DiffValue make_result(Shape shape, std::vector<double> value, std::vector<DiffValue> parents,
                      std::function<void(Node&)> backward);

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Fills gradients of every leaf reachable from `loss`, which must be 1x1.
void backward(const DiffValue& loss);

// ---- operations -------------------------------------------------------------

DiffValue matmul(const DiffValue& a, const DiffValue& b);
/// x W + b, with W (in x out) and b (1 x out).
DiffValue linear(const DiffValue& x, const DiffValue& weight, const DiffValue& bias);

DiffValue add(const DiffValue& a, const DiffValue& b);
DiffValue sub(const DiffValue& a, const DiffValue& b);
DiffValue mul(const DiffValue& a, const DiffValue& b);
/// Elementwise a / b.
DiffValue div(const DiffValue& a, const DiffValue& b);
/// a (n x c) + row (1 x c) broadcast over rows.
DiffValue add_row(const DiffValue& a, const DiffValue& row);
/// a (n x c) scaled row-wise by col (n x 1).
DiffValue mul_col(const DiffValue& a, const DiffValue& col);
DiffValue scale(const DiffValue& a, double s);
/// Repeats a 1x1 value into the given shape.
DiffValue broadcast(const DiffValue& scalar, Shape shape);

DiffValue concat_cols(std::span<const DiffValue> parts);
DiffValue concat_rows(std::span<const DiffValue> parts);
DiffValue column(const DiffValue& a, std::size_t col);

DiffValue softplus(const DiffValue& a);
DiffValue sigmoid(const DiffValue& a);
DiffValue relu(const DiffValue& a);
DiffValue silu(const DiffValue& a);
DiffValue cos(const DiffValue& a);
DiffValue sin(const DiffValue& a);
DiffValue abs(const DiffValue& a);
DiffValue square(const DiffValue& a);

/// Row-wise softmax. With a mask, entries whose mask is zero are excluded
/// (probability exactly 0); every row needs at least one unmasked entry.
DiffValue softmax_rows(const DiffValue& a);
DiffValue softmax_rows(const DiffValue& a, std::span<const double> mask);

DiffValue sum(const DiffValue& a);
/// axis 0: mean over rows (1 x c); axis 1: mean over columns (n x 1).
DiffValue mean(const DiffValue& a, int axis);
DiffValue mean_all(const DiffValue& a);

DiffValue gather_rows(const DiffValue& a, std::span<const std::size_t> index);
DiffValue segment_sum(const DiffValue& a, std::span<const std::size_t> segment, std::size_t num_segments);
DiffValue segment_mean(const DiffValue& a, std::span<const std::size_t> segment, std::size_t num_segments);

/// Constant block-diagonal operator. Block b maps input rows
/// [in_offset, in_offset + in_rows) to output rows [out_offset, out_offset + out_rows).
struct BlockOperator {
  struct Block {
    std::size_t out_offset = 0;
    std::size_t out_rows = 0;
    std::size_t in_offset = 0;
    std::size_t in_rows = 0;
    std::vector<double> matrix;  // out_rows x in_rows, row-major
  };
  std::size_t out_rows = 0;
  std::size_t in_rows = 0;
  std::vector<Block> blocks;
};

/// y = A x for a constant block-diagonal A, or y = A^T x when transpose is set.
DiffValue block_matmul(std::shared_ptr<const BlockOperator> op, const DiffValue& x, bool transpose = false);
DiffValue block_matmul(const BlockOperator& op, const DiffValue& x, bool transpose = false);

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-column batch normalization with affine terms gamma, beta (1 x c).
/// Training mode normalizes with batch statistics and updates the running
/// estimates in place (unbiased variance); eval mode uses the running estimates.
DiffValue batch_norm(const DiffValue& x, const DiffValue& gamma, const DiffValue& beta,
                     std::span<double> running_mean, std::span<double> running_var,
                     const BatchNormOptions& opts, bool training);

}  // namespace regnet::ad
