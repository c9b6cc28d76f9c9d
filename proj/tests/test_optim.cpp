#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "epmvg/errors.hpp"
#include "epmvg/optim.hpp"
#include "epmvg/params.hpp"
#include "epmvg/serialize.hpp"

using namespace epmvg;
using namespace epmvg::numcore;
using namespace epmvg::distill;

namespace {

void set_grad(Tensor t, const std::vector<double>& g) {
  t.zero_grad();
  auto dst = t.mut_grad();
  REQUIRE(dst.size() == g.size());
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] = g[i];
}

}  // namespace

TEST_CASE("config validation") {
  AdamWConfig ok;
  ok.validate();
  ok.lr = 0.0;  // "hold still" is legal at the optimizer level
  ok.validate();

  AdamWConfig bad = ok;
  bad.lr = -1e-4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.beta2 = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.eps = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.weight_decay = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("zero gradient and zero decay leave parameters untouched") {
  ParamStore store(1);
  Tensor w = store.add_xavier("w", {4, 4}, 4, 4);
  const Tensor before = w.clone();

  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(store, cfg);
  set_grad(w, std::vector<double>(16, 0.0));
  opt.step();
  CHECK(same_bits(w, before));
  CHECK(opt.steps() == 1);

  // a gradient buffer that was never allocated counts as zero too
  ParamStore untouched(1);
  Tensor w2 = untouched.add_xavier("w", {4, 4}, 4, 4);
  REQUIRE(!w2.has_grad());
  AdamW opt2(untouched, cfg);
  opt2.step();
  CHECK(same_bits(w2, before));
}

TEST_CASE("first step from zero state matches the scalar closed form") {
  ParamStore store(1);
  Tensor w = store.add_zeros("w", {1});
  w.mut_data()[0] = 0.7;

  AdamWConfig cfg;
  cfg.lr = 1e-3;
  cfg.weight_decay = 0.0;
  AdamW opt(store, cfg);

  const double g = -0.34;
  set_grad(w, {g});
  opt.step();

  // bias correction cancels on step one: m_hat = g, v_hat = g^2,
  // so the update is exactly -lr * g / (|g| + eps)
  const double expect = 0.7 - cfg.lr * g / (std::fabs(g) + cfg.eps);
  CHECK(w.data()[0] == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("decay with zero gradient is a pure exponential shrink") {
  ParamStore store(1);
  Tensor w = store.add_zeros("w", {2});
  w.mut_data()[0] = 2.0;
  w.mut_data()[1] = -0.5;

  AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.1;
  AdamW opt(store, cfg);
  set_grad(w, {0.0, 0.0});
  opt.step();
  CHECK(w.data()[0] == 2.0 * (1.0 - cfg.lr * cfg.weight_decay));
  CHECK(w.data()[1] == -0.5 * (1.0 - cfg.lr * cfg.weight_decay));

  set_grad(w, {0.0, 0.0});
  opt.step();
  const double shrink2 = std::pow(1.0 - cfg.lr * cfg.weight_decay, 2.0);
  CHECK(w.data()[0] == doctest::Approx(2.0 * shrink2).epsilon(1e-15));
}

TEST_CASE("learning-rate groups scale the whole update") {
  ParamStore store(1);
  Tensor fast = store.add_zeros("head.w", {3});
  Tensor slow = store.add_zeros("stem.w", {3});
  for (int i = 0; i < 3; ++i) {
    fast.mut_data()[i] = 0.25 * (i + 1);
    slow.mut_data()[i] = 0.25 * (i + 1);
  }

  AdamWConfig cfg;
  cfg.lr = 1e-2;
  cfg.weight_decay = 0.0;
  AdamW opt(store, cfg, [](const std::string& name) {
    return name.starts_with("stem.") ? 0.1 : 1.0;
  });
  CHECK(opt.lr_for("head.w") == 1e-2);
  CHECK(opt.lr_for("stem.w") == doctest::Approx(1e-3));

  const std::vector<double> g{0.3, -0.2, 0.9};
  set_grad(fast, g);
  set_grad(slow, g);
  opt.step();

  for (int i = 0; i < 3; ++i) {
    const double d_fast = fast.data()[i] - 0.25 * (i + 1);
    const double d_slow = slow.data()[i] - 0.25 * (i + 1);
    CHECK(d_slow == doctest::Approx(0.1 * d_fast).epsilon(1e-12));
  }
}

TEST_CASE("multi-step trajectory matches an independent reference") {
  ParamStore store(5);
  Tensor w = store.add_xavier("w", {2, 3}, 3, 2);
  std::vector<double> ref(w.data().begin(), w.data().end());
  std::vector<double> m(6, 0.0), v(6, 0.0);

  AdamWConfig cfg;
  cfg.lr = 3e-3;
  cfg.weight_decay = 0.05;
  AdamW opt(store, cfg);

  for (int step = 1; step <= 7; ++step) {
    std::vector<double> g(6);
    for (int i = 0; i < 6; ++i) g[i] = std::sin(0.7 * step + i);
    set_grad(w, g);
    opt.step();

    for (int i = 0; i < 6; ++i) {
      ref[i] -= cfg.lr * cfg.weight_decay * ref[i];
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(cfg.beta1, step));
      const double vh = v[i] / (1 - std::pow(cfg.beta2, step));
      ref[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
  CHECK(opt.steps() == 7);
  for (int i = 0; i < 6; ++i)
    CHECK(w.data()[i] == doctest::Approx(ref[i]).epsilon(1e-13));
}

TEST_CASE("frozen parameters are skipped entirely") {
  ParamStore store(2);
  Tensor w = store.add_xavier("w", {3}, 3, 1);
  const Tensor before = w.clone();
  store.set_requires_grad(false);

  AdamWConfig cfg;  // nonzero decay would shrink w if it were touched
  AdamW opt(store, cfg);
  set_grad(w, {1.0, 1.0, 1.0});
  opt.step();
  CHECK(same_bits(w, before));
}

TEST_CASE("moment state round trips through a checkpoint for resume") {
  auto build = [](ParamStore& store) {
    Tensor w = store.add_xavier("w", {2, 2}, 2, 2);
    Tensor b = store.add_zeros("b", {2});
    return std::pair(w, b);
  };
  auto grads = [](int step) {
    return std::pair(std::vector<double>{0.1 * step, -0.2, 0.3, 0.05 * step},
                     std::vector<double>{-0.4, 0.6 * step});
  };

  // uninterrupted: three steps straight through
  ParamStore a(9);
  auto [aw, ab] = build(a);
  AdamW opt_a(a, {});
  for (int s = 1; s <= 3; ++s) {
    auto [gw, gb] = grads(s);
    set_grad(aw, gw);
    set_grad(ab, gb);
    opt_a.step();
  }

  // interrupted: two steps, snapshot params + moments, fresh optimizer, resume
  ParamStore b(9);
  auto [bw, bb] = build(b);
  {
    AdamW opt_b(b, {});
    for (int s = 1; s <= 2; ++s) {
      auto [gw, gb] = grads(s);
      set_grad(bw, gw);
      set_grad(bb, gb);
      opt_b.step();
    }
    CheckpointData snap = snapshot_params(opt_b.state(), kStudentMagic);

    AdamW resumed(b, {});
    assign_params(snap, resumed.state());
    resumed.set_steps(opt_b.steps());
    auto [gw, gb] = grads(3);
    set_grad(bw, gw);
    set_grad(bb, gb);
    resumed.step();
    CHECK(resumed.steps() == 3);
  }
  CHECK(same_bits(aw, bw));
  CHECK(same_bits(ab, bb));
}

TEST_CASE("contract violations are loud") {
  ParamStore store(3);
  Tensor w = store.add_zeros("w", {2});
  AdamW opt(store, {});
  store.add_zeros("late", {2});
  set_grad(w, {0.1, 0.1});
  CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("late"), ContractError);

  CHECK_THROWS_AS(opt.set_lr(-0.5), ConfigError);
  opt.set_lr(0.05);
  CHECK(opt.lr() == 0.05);
  CHECK_THROWS_AS(AdamW(store, AdamWConfig{.eps = 0.0}), ConfigError);
}
