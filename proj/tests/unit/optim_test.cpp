#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "regnet/error.hpp"
#include "regnet/optim.hpp"

using namespace regnet;

TEST_CASE("zero gradient and zero decay leave parameters unchanged") {
  std::vector<double> p{0.5, -1.5, 2.0}, g(3, 0.0), m(3, 0.0), v(3, 0.0);
  const std::vector<double> before = p;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  for (std::int64_t step = 1; step <= 5; ++step) adamw_update(p, g, m, v, step, 1e-2, cfg);
  CHECK(p == before);
}

TEST_CASE("first step matches the closed form") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  const double lr = 3e-3;
  std::vector<double> p(8), g(8), m(8, 0.0), v(8, 0.0);
  for (std::size_t i = 0; i < 8; ++i) {
    p[i] = u(rng);
    g[i] = u(rng);
  }
  const std::vector<double> p0 = p;
  adamw_update(p, g, m, v, 1, lr, cfg);
  for (std::size_t i = 0; i < 8; ++i) {
    // m_hat = g, v_hat = g^2 after bias correction.
    const double want = p0[i] - lr * g[i] / (std::abs(g[i]) + cfg.eps);
    CHECK(std::abs(p[i] - want) < 1e-15);
    CHECK(std::abs(m[i] - (1 - cfg.beta1) * g[i]) < 1e-16);
    CHECK(std::abs(v[i] - (1 - cfg.beta2) * g[i] * g[i]) < 1e-16);
  }
}

TEST_CASE("decoupled weight decay") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.1;
  const double lr = 0.5;
  std::vector<double> p{2.0, -4.0}, g(2, 0.0), m(2, 0.0), v(2, 0.0);
  adamw_update(p, g, m, v, 1, lr, cfg);
  CHECK(p[0] == doctest::Approx(2.0 * (1 - lr * 0.1)).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(-4.0 * (1 - lr * 0.1)).epsilon(1e-15));
}

TEST_CASE("second step follows the bias-corrected recursion") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.01;
  const double lr = 1e-2;
  std::vector<double> p{1.0}, m{0.0}, v{0.0};
  const double g1 = 0.3, g2 = -0.7;
  std::vector<double> g{g1};
  adamw_update(p, g, m, v, 1, lr, cfg);
  g[0] = g2;
  const double p1 = p[0];
  adamw_update(p, g, m, v, 2, lr, cfg);

  const double m2 = cfg.beta1 * (1 - cfg.beta1) * g1 + (1 - cfg.beta1) * g2;
  const double v2 = cfg.beta2 * (1 - cfg.beta2) * g1 * g1 + (1 - cfg.beta2) * g2 * g2;
  const double mh = m2 / (1 - cfg.beta1 * cfg.beta1);
  const double vh = v2 / (1 - cfg.beta2 * cfg.beta2);
  const double want = p1 * (1 - lr * cfg.weight_decay) - lr * mh / (std::sqrt(vh) + cfg.eps);
  CHECK(p[0] == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("adamw_step walks the store and rejects non-finite gradients") {
  ParameterStore store;
  DiffValue w = store.add("w", {1, 2}, {1.0, 2.0});
  store.add("buffer", {1, 2}, {5.0, 5.0}, false);
  AdamWState state = make_adamw_state(store);
  CHECK(state.m.size() == 1);
  ad::backward(ad::sum(ad::square(w)));
  adamw_step(store, state, 0.1, {});
  CHECK(state.step == 1);
  CHECK(w.data()[0] < 1.0);
  CHECK(store.get("buffer").value.data()[0] == 5.0);

  store.zero_grad();
  ad::backward(ad::sum(ad::mul(w, DiffValue::constant({1, 2}, {NAN, 1.0}))));
  const std::vector<double> before(w.data().begin(), w.data().end());
  try {
    adamw_step(store, state, 0.1, {});
    FAIL("expected NonFiniteGradient");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonFiniteGradient);
  }
  CHECK(w.data()[0] == before[0]);
  CHECK(w.data()[1] == before[1]);
}

TEST_CASE("one-cycle schedule boundaries") {
  OneCycleConfig cfg;
  const std::int64_t total = 1000;
  CHECK(onecycle_lr(0, total, cfg) == doctest::Approx(cfg.max_lr / cfg.div_factor).epsilon(1e-15));
  CHECK(onecycle_lr(300, total, cfg) == doctest::Approx(cfg.max_lr).epsilon(1e-15));
  CHECK(onecycle_lr(total, total, cfg) == doctest::Approx(cfg.max_lr / cfg.final_div).epsilon(1e-12));

  // Halfway through each phase a cosine sits at the midpoint.
  CHECK(onecycle_lr(150, total, cfg) == doctest::Approx(0.5 * (cfg.max_lr / cfg.div_factor + cfg.max_lr)));
  CHECK(onecycle_lr(650, total, cfg) == doctest::Approx(0.5 * (cfg.max_lr + cfg.max_lr / cfg.final_div)));

  double prev = 0.0;
  for (std::int64_t s = 0; s <= 300; ++s) {
    const double lr = onecycle_lr(s, total, cfg);
    CHECK(lr >= prev);
    prev = lr;
  }
  for (std::int64_t s = 301; s <= total; ++s) {
    const double lr = onecycle_lr(s, total, cfg);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(onecycle_lr(-1, total, cfg), Error);
  CHECK_THROWS_AS(onecycle_lr(total + 1, total, cfg), Error);
}

TEST_CASE("default optimizer settings") {
  const AdamWConfig a;
  const OneCycleConfig o;
  CHECK(a.weight_decay == 1e-5);
  CHECK(o.max_lr == 8e-4);
}
