#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "regnet/autodiff.hpp"
#include "regnet/error.hpp"
#include "regnet/gradcheck.hpp"
#include "regnet/nn.hpp"

using namespace regnet;
namespace ad = regnet::ad;

namespace {

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

DiffValue leaf(std::mt19937_64& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  return DiffValue::leaf(s, uniform(rng, s.size(), lo, hi));
}

// sum(f(x) * R) for a fixed random R.
std::function<DiffValue()> projected(std::function<DiffValue()> f, std::mt19937_64& rng) {
  const DiffValue probe = [&] {
    ad::NoGradGuard g;
    return f();
  }();
  const DiffValue r = DiffValue::constant(probe.shape(), uniform(rng, probe.shape().size()));
  return [f, r] { return ad::sum(ad::mul(f(), r)); };
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::IoError;
}

}  // namespace

TEST_CASE("closed-form forward values") {
  CHECK(ad::softplus(DiffValue::scalar(0.0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  const DiffValue v = DiffValue::constant({3, 1}, {1, 2, 3});
  const std::vector<std::size_t> seg{0, 0, 1};
  const DiffValue s = ad::segment_sum(v, seg, 2);
  CHECK(s.data()[0] == 3.0);
  CHECK(s.data()[1] == 3.0);
  const DiffValue m = ad::segment_mean(v, seg, 2);
  CHECK(m.data()[0] == 1.5);
  CHECK(m.data()[1] == 3.0);

  const DiffValue p = ad::softmax_rows(DiffValue::constant({1, 3}, {2, 1, 0}));
  const double z = std::exp(2.0) + std::exp(1.0) + 1.0;
  CHECK(std::abs(p.data()[0] - std::exp(2.0) / z) < 1e-15);
  CHECK(std::abs(p.data()[0] - 0.66524) < 1e-5);
  CHECK(std::abs(p.data()[1] - 0.24473) < 1e-5);
  CHECK(std::abs(p.data()[2] - 0.09003) < 1e-5);

  const std::vector<double> mask{1, 0, 1};
  const DiffValue pm = ad::softmax_rows(DiffValue::constant({1, 3}, {2, 1, 0}), mask);
  CHECK(pm.data()[1] == 0.0);
  CHECK(std::abs(pm.data()[0] - std::exp(2.0) / (std::exp(2.0) + 1.0)) < 1e-15);

  const DiffValue sg = ad::sigmoid(DiffValue::constant({1, 2}, {0.0, 800.0}));
  CHECK(sg.data()[0] == 0.5);
  CHECK(sg.data()[1] == 1.0);
  const DiffValue sp = ad::softplus(DiffValue::constant({1, 2}, {800.0, -800.0}));
  CHECK(sp.data()[0] == doctest::Approx(800.0));
  CHECK(std::isfinite(sp.data()[1]));
}

TEST_CASE("backward on linear and piecewise functions") {
  const DiffValue w = DiffValue::leaf({1, 3}, {0.5, -1.0, 2.0});
  const DiffValue x = DiffValue::constant({1, 3}, {3.0, 4.0, -5.0});
  ad::backward(ad::sum(ad::mul(w, x)));
  REQUIRE(w.grad().size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(w.grad()[i] == x.data()[i]);

  const DiffValue r = DiffValue::leaf({1, 2}, {-1.0, 2.0});
  ad::backward(ad::sum(ad::relu(r)));
  CHECK(r.grad()[0] == 0.0);
  CHECK(r.grad()[1] == 1.0);
}

TEST_CASE("shared subexpressions are accumulated once per path") {
  // a = x + x; loss = sum(a * a) = 4 x^2 -> d/dx = 8 x
  const DiffValue x = DiffValue::leaf({1, 2}, {1.5, -2.0});
  const DiffValue a = ad::add(x, x);
  ad::backward(ad::sum(ad::mul(a, a)));
  CHECK(x.grad()[0] == doctest::Approx(12.0));
  CHECK(x.grad()[1] == doctest::Approx(-16.0));
  CHECK(x.grad().size() == x.data().size());

  // Leaves accumulate across passes until zeroed.
  ad::backward(ad::sum(x));
  CHECK(x.grad()[0] == doctest::Approx(13.0));
  DiffValue(x).zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("no-grad mode records nothing") {
  const DiffValue x = DiffValue::leaf({1, 2}, {1.0, 2.0});
  DiffValue y;
  {
    ad::NoGradGuard guard;
    CHECK_FALSE(ad::grad_enabled());
    y = ad::square(x);
  }
  CHECK(ad::grad_enabled());
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("error kinds") {
  const DiffValue a = DiffValue::constant({2, 3}, 1.0);
  const DiffValue b = DiffValue::constant({2, 3}, 1.0);
  CHECK(kind_of([&] { ad::matmul(a, b); }) == ErrorKind::ShapeError);
  CHECK(kind_of([&] { ad::add(a, DiffValue::constant({3, 2}, 1.0)); }) == ErrorKind::ShapeError);
  const std::vector<std::size_t> bad{0, 5};
  CHECK(kind_of([&] { ad::segment_sum(a, bad, 2); }) == ErrorKind::IndexError);
  const DiffValue l = DiffValue::leaf({2, 3}, std::vector<double>(6, 1.0));
  CHECK(kind_of([&] { ad::backward(ad::square(l)); }) == ErrorKind::ShapeError);
}

TEST_CASE("block_matmul matches a dense product") {
  std::mt19937_64 rng(3);
  ad::BlockOperator op;
  op.out_rows = 5;
  op.in_rows = 4;
  op.blocks.push_back({0, 2, 0, 3, uniform(rng, 6)});
  op.blocks.push_back({2, 3, 3, 1, uniform(rng, 3)});
  std::vector<double> dense(5 * 4, 0.0);
  for (const auto& b : op.blocks)
    for (std::size_t r = 0; r < b.out_rows; ++r)
      for (std::size_t c = 0; c < b.in_rows; ++c) dense[(b.out_offset + r) * 4 + b.in_offset + c] = b.matrix[r * b.in_rows + c];
  const DiffValue x = leaf(rng, {4, 2});
  const DiffValue y = ad::block_matmul(op, x);
  const DiffValue want = ad::matmul(DiffValue::constant({5, 4}, dense), x);
  for (std::size_t i = 0; i < y.data().size(); ++i) CHECK(std::abs(y.data()[i] - want.data()[i]) < 1e-15);

  const DiffValue z = leaf(rng, {5, 2});
  const DiffValue yt = ad::block_matmul(op, z, true);
  std::vector<double> dense_t(4 * 5);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 4; ++c) dense_t[c * 5 + r] = dense[r * 4 + c];
  const DiffValue want_t = ad::matmul(DiffValue::constant({4, 5}, dense_t), z);
  for (std::size_t i = 0; i < yt.data().size(); ++i) CHECK(std::abs(yt.data()[i] - want_t.data()[i]) < 1e-15);
}

TEST_CASE("every op agrees with central differences") {
  std::mt19937_64 rng(11);
  const DiffValue a = leaf(rng, {4, 3});
  const DiffValue b = leaf(rng, {4, 3});
  const DiffValue pos = leaf(rng, {4, 3}, 0.5, 2.0);
  const DiffValue w = leaf(rng, {3, 5});
  const DiffValue row = leaf(rng, {1, 3});
  const DiffValue col = leaf(rng, {4, 1});
  const DiffValue s = leaf(rng, {1, 1});
  // Keep relu and abs away from their kinks.
  const DiffValue kinked = DiffValue::leaf({4, 3}, {0.3, -0.7, 1.2, -0.4, 0.9, -1.1, 0.5, -0.2, 0.8, -0.6, 0.25, -0.9});
  const std::vector<std::size_t> seg{0, 2, 0, 1};
  const std::vector<std::size_t> idx{3, 0, 0, 2, 1};
  const std::vector<double> mask{1, 0, 1, 1, 1, 0, 0, 1, 1, 1, 1, 1};
  std::vector<double> rm(3, 0.1), rv(3, 1.3);
  const DiffValue gamma = leaf(rng, {1, 3}, 0.5, 1.5);
  const DiffValue beta = leaf(rng, {1, 3});
  ad::BlockOperator op{3, 4, {{0, 1, 0, 2, {0.3, -0.5}}, {1, 2, 2, 2, {1.0, 0.2, -0.4, 0.7}}}};

  struct Case {
    std::string name;
    std::function<DiffValue()> f;
    std::vector<NamedValue> in;
  };
  const std::vector<Case> cases{
      {"matmul", [&] { return ad::matmul(a, w); }, {{"a", a}, {"w", w}}},
      {"linear", [&] { return ad::linear(a, w, DiffValue::constant({1, 5}, 0.3)); }, {{"a", a}, {"w", w}}},
      {"add", [&] { return ad::add(a, b); }, {{"a", a}, {"b", b}}},
      {"sub", [&] { return ad::sub(a, b); }, {{"a", a}, {"b", b}}},
      {"mul", [&] { return ad::mul(a, b); }, {{"a", a}, {"b", b}}},
      {"div", [&] { return ad::div(a, pos); }, {{"a", a}, {"pos", pos}}},
      {"add_row", [&] { return ad::add_row(a, row); }, {{"a", a}, {"row", row}}},
      {"mul_col", [&] { return ad::mul_col(a, col); }, {{"a", a}, {"col", col}}},
      {"scale", [&] { return ad::scale(a, -2.5); }, {{"a", a}}},
      {"broadcast", [&] { return ad::broadcast(s, {2, 3}); }, {{"s", s}}},
      {"concat_cols", [&] { const DiffValue p[] = {a, b}; return ad::concat_cols(p); }, {{"a", a}, {"b", b}}},
      {"concat_rows", [&] { const DiffValue p[] = {a, row}; return ad::concat_rows(p); }, {{"a", a}, {"row", row}}},
      {"column", [&] { return ad::column(a, 1); }, {{"a", a}}},
      {"softplus", [&] { return ad::softplus(a); }, {{"a", a}}},
      {"sigmoid", [&] { return ad::sigmoid(a); }, {{"a", a}}},
      {"relu", [&] { return ad::relu(kinked); }, {{"kinked", kinked}}},
      {"silu", [&] { return ad::silu(a); }, {{"a", a}}},
      {"cos", [&] { return ad::cos(a); }, {{"a", a}}},
      {"sin", [&] { return ad::sin(a); }, {{"a", a}}},
      {"abs", [&] { return ad::abs(kinked); }, {{"kinked", kinked}}},
      {"square", [&] { return ad::square(a); }, {{"a", a}}},
      {"softmax", [&] { return ad::softmax_rows(a); }, {{"a", a}}},
      {"masked softmax", [&] { return ad::softmax_rows(a, mask); }, {{"a", a}}},
      {"sum", [&] { return ad::sum(a); }, {{"a", a}}},
      {"mean rows", [&] { return ad::mean(a, 0); }, {{"a", a}}},
      {"mean cols", [&] { return ad::mean(a, 1); }, {{"a", a}}},
      {"mean_all", [&] { return ad::mean_all(a); }, {{"a", a}}},
      {"gather_rows", [&] { return ad::gather_rows(a, idx); }, {{"a", a}}},
      {"segment_sum", [&] { return ad::segment_sum(a, seg, 3); }, {{"a", a}}},
      {"segment_mean", [&] { return ad::segment_mean(a, seg, 3); }, {{"a", a}}},
      {"block_matmul", [&] { return ad::block_matmul(op, a); }, {{"a", a}}},
      {"batch_norm eval",
       [&] { return ad::batch_norm(a, gamma, beta, rm, rv, {}, false); },
       {{"a", a}, {"gamma", gamma}, {"beta", beta}}},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const GradCheckResult r = grad_check(projected(c.f, rng), c.in);
    CHECK(r.max_relative_error < 1e-7);
  }
}

TEST_CASE("block_matmul transpose gradient") {
  std::mt19937_64 rng(12);
  ad::BlockOperator op{3, 4, {{0, 1, 0, 2, {0.3, -0.5}}, {1, 2, 2, 2, {1.0, 0.2, -0.4, 0.7}}}};
  const DiffValue z = leaf(rng, {3, 2});
  const GradCheckResult r = grad_check(projected([&] { return ad::block_matmul(op, z, true); }, rng), {{"z", z}});
  CHECK(r.max_relative_error < 1e-7);
}

TEST_CASE("batch norm training mode") {
  std::mt19937_64 rng(5);
  const DiffValue x = leaf(rng, {6, 2});
  const DiffValue gamma = DiffValue::leaf({1, 2}, {1.0, 2.0});
  const DiffValue beta = DiffValue::leaf({1, 2}, {0.0, -1.0});
  std::vector<double> rm{0.0, 0.0}, rv{1.0, 1.0};
  const DiffValue y = ad::batch_norm(x, gamma, beta, rm, rv, {}, true);
  for (std::size_t c = 0; c < 2; ++c) {
    double mu = 0.0, var = 0.0;
    for (std::size_t r = 0; r < 6; ++r) mu += x.at(r, c) / 6.0;
    for (std::size_t r = 0; r < 6; ++r) var += (x.at(r, c) - mu) * (x.at(r, c) - mu) / 6.0;
    for (std::size_t r = 0; r < 6; ++r) {
      const double want = gamma.data()[c] * (x.at(r, c) - mu) / std::sqrt(var + 1e-5) + beta.data()[c];
      CHECK(std::abs(y.at(r, c) - want) < 1e-12);
    }
    CHECK(std::abs(rm[c] - 0.1 * mu) < 1e-15);
    CHECK(std::abs(rv[c] - (0.9 + 0.1 * var * 6.0 / 5.0)) < 1e-15);
  }

  // Gradient through batch statistics; running stats restored before each call.
  auto f = [&] {
    std::vector<double> m{0.0, 0.0}, v{1.0, 1.0};
    return ad::batch_norm(x, gamma, beta, m, v, {}, true);
  };
  const GradCheckResult r = grad_check(projected(f, rng), {{"x", x}, {"gamma", gamma}, {"beta", beta}});
  CHECK(r.max_relative_error < 1e-7);
}

TEST_CASE("batch norm in eval mode with frozen statistics") {
  std::mt19937_64 rng(6);
  ParameterStore store;
  BatchNorm bn(store, "bn", 4);
  for (auto& p : store.all()) {
    auto d = p.value.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = p.trainable ? 0.5 + 0.25 * i : 0.3 + 0.4 * i;
  }
  const DiffValue x = leaf(rng, {5, 4});
  std::vector<NamedValue> in{{"x", x}};
  for (const auto& nv : trainable_inputs(store)) in.push_back(nv);
  const GradCheckResult r = grad_check(projected([&] { return bn(x, false); }, rng), in);
  CHECK(r.max_relative_error < 1e-6);
}

TEST_CASE("two-layer MLP gradients match finite differences") {
  std::mt19937_64 rng(7);
  ParameterStore store;
  Initializer init(7);
  Mlp2 mlp(store, init, "mlp", 5, 7, 3);
  const DiffValue x = leaf(rng, {4, 5});
  std::vector<NamedValue> in{{"x", x}};
  for (const auto& nv : trainable_inputs(store)) in.push_back(nv);
  GradCheckOptions o;
  o.eps = 1e-5;
  const GradCheckResult r = grad_check(projected([&] { return mlp(x); }, rng), in, o);
  CHECK(r.max_relative_error < 1e-6);
  CHECK(r.tensors.size() == 5);
}

TEST_CASE("grad_check contract") {
  const DiffValue x = DiffValue::leaf({1, 3}, {0.1, 0.2, 0.3});
  const GradCheckResult identity = grad_check([&] { return ad::sum(x); }, {{"x", x}});
  CHECK(identity.max_relative_error < 1e-9);

  int calls = 0;
  auto stochastic = [&] { return ad::sum(ad::scale(x, 1.0 + 1e-3 * ++calls)); };
  CHECK(kind_of([&] { grad_check(stochastic, {{"x", x}}); }) == ErrorKind::NondeterministicFunction);

  const DiffValue c = DiffValue::constant({1, 1}, 1.0);
  CHECK_THROWS_AS(grad_check([&] { return c; }, {{"c", c}}), Error);
}
