#include "regnet/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "regnet/error.hpp"

namespace regnet::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;

ConstMap view(const Node& n) {
  return ConstMap(n.value.data(), static_cast<Eigen::Index>(n.shape.rows),
                  static_cast<Eigen::Index>(n.shape.cols));
}
MutMap grad_view(Node& n) {
  n.ensure_grad();
  return MutMap(n.grad.data(), static_cast<Eigen::Index>(n.shape.rows),
                static_cast<Eigen::Index>(n.shape.cols));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  std::ostringstream msg;
  msg << op << ": incompatible shapes " << to_string(a) << " and " << to_string(b);
  raise(ErrorKind::ShapeError, msg.str());
}

void require_same(const char* op, const DiffValue& a, const DiffValue& b) {
  if (!(a.shape() == b.shape())) shape_error(op, a.shape(), b.shape());
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i].node(); }

// Elementwise unary op given f(x) and f'(x, y) with y = f(x).
template <class F, class DF>
DiffValue unary(const DiffValue& a, F f, DF df) {
  const auto& x = a.node()->value;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_result(a.shape(), std::move(y), {a}, [df](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      p.grad[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

void check_index(std::size_t idx, std::size_t bound, const char* op) {
  if (idx >= bound) {
    std::ostringstream msg;
    msg << op << ": index " << idx << " out of range [0, " << bound << ")";
    raise(ErrorKind::IndexError, msg.str());
  }
}

}  // namespace

std::string to_string(const Shape& s) {
  std::ostringstream out;
  out << "(" << s.rows << " x " << s.cols << ")";
  return out.str();
}

// ---- DiffValue ----------------------------------------------------------------

DiffValue DiffValue::constant(Shape shape, std::vector<double> data) {
  if (data.size() != shape.size()) {
    raise(ErrorKind::ShapeError, "constant: data size does not match " + to_string(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value = std::move(data);
  return DiffValue(std::move(n));
}

DiffValue DiffValue::constant(Shape shape, double fill) {
  return constant(shape, std::vector<double>(shape.size(), fill));
}

DiffValue DiffValue::leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  DiffValue v = constant(shape, std::move(data));
  v.node_->requires_grad = requires_grad;
  return v;
}

const Shape& DiffValue::shape() const { return node_->shape; }
bool DiffValue::requires_grad() const { return node_->requires_grad; }
std::span<const double> DiffValue::data() const { return node_->value; }
std::span<double> DiffValue::mutable_data() { return node_->value; }

double DiffValue::item() const {
  if (shape().size() != 1) raise(ErrorKind::ShapeError, "item() on non-scalar " + to_string(shape()));
  return node_->value[0];
}

std::span<const double> DiffValue::grad() const { return node_->grad; }
bool DiffValue::has_grad() const { return node_->grad.size() == node_->value.size(); }
void DiffValue::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

DiffValue make_result(Shape shape, std::vector<double> value, std::vector<DiffValue> parents,
                      std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const DiffValue& p) { return p.requires_grad(); });
    if (any) {
      n->requires_grad = true;
      n->is_leaf = false;
      n->parents = std::move(parents);
      n->backward = std::move(backward_fn);
    }
  }
  return DiffValue(std::move(n));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const DiffValue& loss) {
  if (loss.shape().size() != 1) {
    raise(ErrorKind::ShapeError, "backward requires a scalar loss, got " + to_string(loss.shape()));
  }
  Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order of interior nodes.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].node();
      if (p->requires_grad && !p->is_leaf && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (!n->is_leaf) n->grad.assign(n->value.size(), 0.0);
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf && n->backward) n->backward(*n);
  }
}

// ---- linear algebra ---------------------------------------------------------

DiffValue matmul(const DiffValue& a, const DiffValue& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a.shape(), b.shape());
  const Shape out{a.rows(), b.cols()};
  std::vector<double> y(out.size());
  MutMap(y.data(), out.rows, out.cols).noalias() = view(*a.node()) * view(*b.node());
  return make_result(out, std::move(y), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const ConstMap dy(self.grad.data(), self.shape.rows, self.shape.cols);
    if (pa.requires_grad) grad_view(pa).noalias() += dy * view(pb).transpose();
    if (pb.requires_grad) grad_view(pb).noalias() += view(pa).transpose() * dy;
  });
}

DiffValue linear(const DiffValue& x, const DiffValue& weight, const DiffValue& bias) {
  if (x.cols() != weight.rows()) shape_error("linear", x.shape(), weight.shape());
  if (bias.rows() != 1 || bias.cols() != weight.cols()) shape_error("linear(bias)", weight.shape(), bias.shape());
  const Shape out{x.rows(), weight.cols()};
  std::vector<double> y(out.size());
  MutMap ym(y.data(), out.rows, out.cols);
  ym.noalias() = view(*x.node()) * view(*weight.node());
  ym.rowwise() += view(*bias.node()).row(0);
  return make_result(out, std::move(y), {x, weight, bias}, [](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    Node& pb = parent(self, 2);
    const ConstMap dy(self.grad.data(), self.shape.rows, self.shape.cols);
    if (px.requires_grad) grad_view(px).noalias() += dy * view(pw).transpose();
    if (pw.requires_grad) grad_view(pw).noalias() += view(px).transpose() * dy;
    if (pb.requires_grad) grad_view(pb).row(0) += dy.colwise().sum();
  });
}

// ---- elementwise arithmetic -------------------------------------------------

DiffValue add(const DiffValue& a, const DiffValue& b) {
  require_same("add", a, b);
  const auto& x = a.node()->value;
  const auto& z = b.node()->value;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + z[i];
  return make_result(a.shape(), std::move(y), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  });
}

DiffValue sub(const DiffValue& a, const DiffValue& b) {
  require_same("sub", a, b);
  const auto& x = a.node()->value;
  const auto& z = b.node()->value;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] - z[i];
  return make_result(a.shape(), std::move(y), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  });
}

DiffValue mul(const DiffValue& a, const DiffValue& b) {
  require_same("mul", a, b);
  const auto& x = a.node()->value;
  const auto& z = b.node()->value;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
  return make_result(a.shape(), std::move(y), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

DiffValue div(const DiffValue& a, const DiffValue& b) {
  require_same("div", a, b);
  const auto& x = a.node()->value;
  const auto& z = b.node()->value;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] / z[i];
  return make_result(a.shape(), std::move(y), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i] * self.value[i] / pb.value[i];
    }
  });
}

DiffValue add_row(const DiffValue& a, const DiffValue& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a.shape(), row.shape());
  std::vector<double> y(a.node()->value);
  MutMap(y.data(), a.rows(), a.cols()).rowwise() += view(*row.node()).row(0);
  return make_result(a.shape(), std::move(y), {a, row}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pr = parent(self, 1);
    const ConstMap dy(self.grad.data(), self.shape.rows, self.shape.cols);
    if (pa.requires_grad) grad_view(pa) += dy;
    if (pr.requires_grad) grad_view(pr).row(0) += dy.colwise().sum();
  });
}

DiffValue mul_col(const DiffValue& a, const DiffValue& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) shape_error("mul_col", a.shape(), col.shape());
  const std::size_t n = a.rows();
  const std::size_t c = a.cols();
  const auto& x = a.node()->value;
  const auto& s = col.node()->value;
  std::vector<double> y(x.size());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) y[r * c + j] = x[r * c + j] * s[r];
  return make_result(a.shape(), std::move(y), {a, col}, [n, c](Node& self) {
    Node& pa = parent(self, 0);
    Node& ps = parent(self, 1);
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) pa.grad[r * c + j] += self.grad[r * c + j] * ps.value[r];
    }
    if (ps.requires_grad) {
      ps.ensure_grad();
      for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += self.grad[r * c + j] * pa.value[r * c + j];
        ps.grad[r] += acc;
      }
    }
  });
}

DiffValue scale(const DiffValue& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

DiffValue broadcast(const DiffValue& scalar, Shape shape) {
  if (scalar.shape().size() != 1) shape_error("broadcast", scalar.shape(), shape);
  std::vector<double> y(shape.size(), scalar.data()[0]);
  return make_result(shape, std::move(y), {scalar}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    double acc = 0.0;
    for (double g : self.grad) acc += g;
    p.grad[0] += acc;
  });
}

// ---- reshaping ----------------------------------------------------------------

DiffValue concat_cols(std::span<const DiffValue> parts) {
  if (parts.empty()) raise(ErrorKind::ShapeError, "concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rows() != n) shape_error("concat_cols", parts[0].shape(), p.shape());
    offsets.push_back(total);
    total += p.cols();
  }
  std::vector<double> y(n * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].node()->value;
    const std::size_t c = parts[k].cols();
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * c), c,
                  y.begin() + static_cast<std::ptrdiff_t>(r * total + offsets[k]));
  }
  std::vector<DiffValue> parents(parts.begin(), parts.end());
  return make_result({n, total}, std::move(y), std::move(parents), [n, total, offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      p.ensure_grad();
      const std::size_t c = p.shape.cols;
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) p.grad[r * c + j] += self.grad[r * total + offsets[k] + j];
    }
  });
}

DiffValue concat_rows(std::span<const DiffValue> parts) {
  if (parts.empty()) raise(ErrorKind::ShapeError, "concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.cols() != c) shape_error("concat_rows", parts[0].shape(), p.shape());
    offsets.push_back(total);
    total += p.rows();
  }
  std::vector<double> y;
  y.reserve(total * c);
  for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
  std::vector<DiffValue> parents(parts.begin(), parts.end());
  return make_result({total, c}, std::move(y), std::move(parents), [c, offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      p.ensure_grad();
      const std::size_t base = offsets[k] * c;
      for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += self.grad[base + i];
    }
  });
}

DiffValue column(const DiffValue& a, std::size_t col) {
  check_index(col, a.cols(), "column");
  const std::size_t n = a.rows();
  const std::size_t c = a.cols();
  std::vector<double> y(n);
  for (std::size_t r = 0; r < n; ++r) y[r] = a.data()[r * c + col];
  return make_result({n, 1}, std::move(y), {a}, [n, c, col](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t r = 0; r < n; ++r) p.grad[r * c + col] += self.grad[r];
  });
}

// ---- activations ----------------------------------------------------------------

DiffValue softplus(const DiffValue& a) {
  return unary(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

DiffValue sigmoid(const DiffValue& a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

DiffValue relu(const DiffValue& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

DiffValue silu(const DiffValue& a) {
  return unary(a, [](double x) { return x * stable_sigmoid(x); },
               [](double x, double) {
                 const double s = stable_sigmoid(x);
                 return s * (1.0 + x * (1.0 - s));
               });
}

DiffValue cos(const DiffValue& a) {
  return unary(a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

DiffValue sin(const DiffValue& a) {
  return unary(a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

DiffValue abs(const DiffValue& a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

DiffValue square(const DiffValue& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

DiffValue softmax_rows(const DiffValue& a) {
  std::vector<double> ones(a.shape().size(), 1.0);
  return softmax_rows(a, ones);
}

DiffValue softmax_rows(const DiffValue& a, std::span<const double> mask) {
  if (mask.size() != a.shape().size()) raise(ErrorKind::ShapeError, "softmax_rows: mask size mismatch");
  const std::size_t n = a.rows();
  const std::size_t c = a.cols();
  const auto& x = a.node()->value;
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (mask[r * c + j] != 0.0) mx = std::max(mx, x[r * c + j]);
    if (!std::isfinite(mx)) raise(ErrorKind::ShapeError, "softmax_rows: row has no unmasked entries");
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (mask[r * c + j] == 0.0) continue;
      y[r * c + j] = std::exp(x[r * c + j] - mx);
      z += y[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) y[r * c + j] /= z;
  }
  return make_result(a.shape(), std::move(y), {a}, [n, c](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[r * c + j] * self.value[r * c + j];
      for (std::size_t j = 0; j < c; ++j)
        p.grad[r * c + j] += self.value[r * c + j] * (self.grad[r * c + j] - dot);
    }
  });
}

// ---- reductions ---------------------------------------------------------------

DiffValue sum(const DiffValue& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_result({1, 1}, {acc}, {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (double& g : p.grad) g += self.grad[0];
  });
}

DiffValue mean(const DiffValue& a, int axis) {
  const std::size_t n = a.rows();
  const std::size_t c = a.cols();
  if (axis != 0 && axis != 1) raise(ErrorKind::ShapeError, "mean: axis must be 0 or 1");
  if ((axis == 0 && n == 0) || (axis == 1 && c == 0)) raise(ErrorKind::ShapeError, "mean over empty axis");
  const auto& x = a.node()->value;
  if (axis == 0) {
    std::vector<double> y(c, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) y[j] += x[r * c + j];
    for (double& v : y) v /= static_cast<double>(n);
    return make_result({1, c}, std::move(y), {a}, [n, c](Node& self) {
      Node& p = parent(self, 0);
      if (!p.requires_grad) return;
      p.ensure_grad();
      const double inv = 1.0 / static_cast<double>(n);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) p.grad[r * c + j] += self.grad[j] * inv;
    });
  }
  std::vector<double> y(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < c; ++j) y[r] += x[r * c + j];
    y[r] /= static_cast<double>(c);
  }
  return make_result({n, 1}, std::move(y), {a}, [n, c](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    const double inv = 1.0 / static_cast<double>(c);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) p.grad[r * c + j] += self.grad[r] * inv;
  });
}

DiffValue mean_all(const DiffValue& a) {
  if (a.shape().size() == 0) raise(ErrorKind::ShapeError, "mean_all of empty value");
  return scale(sum(a), 1.0 / static_cast<double>(a.shape().size()));
}

// ---- indexing -------------------------------------------------------------------

DiffValue gather_rows(const DiffValue& a, std::span<const std::size_t> index) {
  const std::size_t c = a.cols();
  const std::size_t n = a.rows();
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> y(idx.size() * c);
  const auto& x = a.node()->value;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    check_index(idx[r], n, "gather_rows");
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(idx[r] * c), c,
                y.begin() + static_cast<std::ptrdiff_t>(r * c));
  }
  const Shape out_shape{idx.size(), c};
  return make_result(out_shape, std::move(y), {a}, [idx = std::move(idx), c](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < c; ++j) p.grad[idx[r] * c + j] += self.grad[r * c + j];
  });
}

DiffValue segment_sum(const DiffValue& a, std::span<const std::size_t> segment, std::size_t num_segments) {
  if (segment.size() != a.rows()) {
    raise(ErrorKind::ShapeError, "segment_sum: segment map length does not match rows");
  }
  const std::size_t c = a.cols();
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  std::vector<double> y(num_segments * c, 0.0);
  const auto& x = a.node()->value;
  for (std::size_t r = 0; r < seg.size(); ++r) {
    check_index(seg[r], num_segments, "segment_sum");
    for (std::size_t j = 0; j < c; ++j) y[seg[r] * c + j] += x[r * c + j];
  }
  return make_result({num_segments, c}, std::move(y), {a}, [seg = std::move(seg), c](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t r = 0; r < seg.size(); ++r)
      for (std::size_t j = 0; j < c; ++j) p.grad[r * c + j] += self.grad[seg[r] * c + j];
  });
}

DiffValue segment_mean(const DiffValue& a, std::span<const std::size_t> segment, std::size_t num_segments) {
  std::vector<double> counts(num_segments, 0.0);
  for (std::size_t s : segment) {
    check_index(s, num_segments, "segment_mean");
    counts[s] += 1.0;
  }
  std::vector<double> inv(num_segments, 0.0);
  for (std::size_t s = 0; s < num_segments; ++s) inv[s] = counts[s] > 0.0 ? 1.0 / counts[s] : 0.0;
  return mul_col(segment_sum(a, segment, num_segments), DiffValue::constant({num_segments, 1}, std::move(inv)));
}

DiffValue block_matmul(const BlockOperator& op, const DiffValue& x, bool transpose) {
  return block_matmul(std::make_shared<const BlockOperator>(op), x, transpose);
}

DiffValue block_matmul(std::shared_ptr<const BlockOperator> shared, const DiffValue& x, bool transpose) {
  const BlockOperator& op = *shared;
  const std::size_t need_in = transpose ? op.out_rows : op.in_rows;
  const std::size_t out_rows = transpose ? op.in_rows : op.out_rows;
  if (x.rows() != need_in) {
    raise(ErrorKind::ShapeError, "block_matmul: operator expects " + std::to_string(need_in) +
                                     " input rows, got " + std::to_string(x.rows()));
  }
  for (const auto& b : op.blocks) {
    if (b.matrix.size() != b.out_rows * b.in_rows || b.out_offset + b.out_rows > op.out_rows ||
        b.in_offset + b.in_rows > op.in_rows) {
      raise(ErrorKind::ShapeError, "block_matmul: malformed block");
    }
  }
  const std::size_t c = x.cols();
  std::vector<double> y(out_rows * c, 0.0);
  MutMap ym(y.data(), out_rows, c);
  const ConstMap xm = view(*x.node());
  for (const auto& b : shared->blocks) {
    const ConstMap a(b.matrix.data(), b.out_rows, b.in_rows);
    if (!transpose) {
      ym.middleRows(b.out_offset, b.out_rows).noalias() += a * xm.middleRows(b.in_offset, b.in_rows);
    } else {
      ym.middleRows(b.in_offset, b.in_rows).noalias() += a.transpose() * xm.middleRows(b.out_offset, b.out_rows);
    }
  }
  return make_result({out_rows, c}, std::move(y), {x}, [shared, transpose, c](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    MutMap dx = grad_view(p);
    const ConstMap dy(self.grad.data(), self.shape.rows, c);
    for (const auto& b : shared->blocks) {
      const ConstMap a(b.matrix.data(), b.out_rows, b.in_rows);
      if (!transpose) {
        dx.middleRows(b.in_offset, b.in_rows).noalias() += a.transpose() * dy.middleRows(b.out_offset, b.out_rows);
      } else {
        dx.middleRows(b.out_offset, b.out_rows).noalias() += a * dy.middleRows(b.in_offset, b.in_rows);
      }
    }
  });
}

// ---- batch normalization ----------------------------------------------------------

DiffValue batch_norm(const DiffValue& x, const DiffValue& gamma, const DiffValue& beta,
                     std::span<double> running_mean, std::span<double> running_var,
                     const BatchNormOptions& opts, bool training) {
  const std::size_t n = x.rows();
  const std::size_t c = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != c) shape_error("batch_norm(gamma)", x.shape(), gamma.shape());
  if (beta.rows() != 1 || beta.cols() != c) shape_error("batch_norm(beta)", x.shape(), beta.shape());
  if (running_mean.size() != c || running_var.size() != c) {
    raise(ErrorKind::ShapeError, "batch_norm: running statistics have wrong width");
  }
  const auto& xv = x.node()->value;
  std::vector<double> mu(c, 0.0);
  std::vector<double> inv_std(c, 0.0);
  if (training && n > 0) {
    std::vector<double> var(c, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) mu[j] += xv[r * c + j];
    for (double& m : mu) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const double d = xv[r * c + j] - mu[j];
        var[j] += d * d;
      }
    for (std::size_t j = 0; j < c; ++j) {
      const double biased = var[j] / static_cast<double>(n);
      const double unbiased = n > 1 ? var[j] / static_cast<double>(n - 1) : biased;
      inv_std[j] = 1.0 / std::sqrt(biased + opts.eps);
      running_mean[j] = (1.0 - opts.momentum) * running_mean[j] + opts.momentum * mu[j];
      running_var[j] = (1.0 - opts.momentum) * running_var[j] + opts.momentum * unbiased;
    }
  } else {
    mu.assign(running_mean.begin(), running_mean.end());
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(running_var[j] + opts.eps);
  }
  std::vector<double> xhat(n * c);
  std::vector<double> y(n * c);
  const auto& g = gamma.node()->value;
  const auto& b = beta.node()->value;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (xv[r * c + j] - mu[j]) * inv_std[j];
      y[r * c + j] = g[j] * xhat[r * c + j] + b[j];
    }
  const bool batch_stats = training && n > 0;
  return make_result(x.shape(), std::move(y), {x, gamma, beta},
                     [n, c, batch_stats, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
    Node& px = parent(self, 0);
    Node& pg = parent(self, 1);
    Node& pb = parent(self, 2);
    const auto& dy = self.grad;
    if (pg.requires_grad) {
      pg.ensure_grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) pg.grad[j] += dy[r * c + j] * xhat[r * c + j];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) pb.grad[j] += dy[r * c + j];
    }
    if (!px.requires_grad) return;
    px.ensure_grad();
    const auto& gv = pg.value;
    if (!batch_stats) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) px.grad[r * c + j] += dy[r * c + j] * gv[j] * inv_std[j];
      return;
    }
    std::vector<double> mean_dy(c, 0.0);
    std::vector<double> mean_dy_xhat(c, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        mean_dy[j] += dy[r * c + j];
        mean_dy_xhat[j] += dy[r * c + j] * xhat[r * c + j];
      }
    for (std::size_t j = 0; j < c; ++j) {
      mean_dy[j] /= static_cast<double>(n);
      mean_dy_xhat[j] /= static_cast<double>(n);
    }
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        px.grad[r * c + j] += gv[j] * inv_std[j] *
                              (dy[r * c + j] - mean_dy[j] - xhat[r * c + j] * mean_dy_xhat[j]);
      }
  });
}

}  // namespace regnet::ad
