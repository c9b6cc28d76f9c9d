#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "epmvg/box.hpp"
#include "epmvg/errors.hpp"
#include "epmvg/fdcheck.hpp"
#include "epmvg/losses.hpp"
#include "epmvg/rng.hpp"

using namespace epmvg;
using namespace epmvg::vg;
using numcore::FdReport;
using numcore::Rng;
using numcore::Tape;
using numcore::Tensor;
using numcore::finite_diff_check;

namespace {

Tensor box_tensor(const BoundingBox& b) {
  return Tensor::from_data({4}, {b.x, b.y, b.w, b.h});
}

BoundingBox random_box(Rng& rng, double min_side = 0.05,
                       double max_side = 0.6) {
  BoundingBox b;
  b.w = rng.uniform(min_side, max_side);
  b.h = rng.uniform(min_side, max_side);
  b.x = rng.uniform(b.w / 2.0, 1.0 - b.w / 2.0);
  b.y = rng.uniform(b.h / 2.0, 1.0 - b.h / 2.0);
  return b;
}

constexpr int kGrid = 512;

// 1-D covered length of grid cell i by the interval [lo, hi].
double cell_overlap(double lo, double hi, int i) {
  const double c0 = static_cast<double>(i) / kGrid;
  const double c1 = static_cast<double>(i + 1) / kGrid;
  return std::max(0.0, std::min(hi, c1) - std::max(lo, c0));
}

struct RasterResult {
  double iou;
  double giou;
};

// Brute-force geometry oracle: walks every cell of a 512x512 grid over the
// unit square and accumulates the covered area of A, B, their overlap, and
// the smallest enclosing box.
RasterResult raster_giou(const BoundingBox& ba, const BoundingBox& bb) {
  const Corners a = to_corners(ba), b = to_corners(bb);
  const double hx1 = std::min(a.x1, b.x1), hy1 = std::min(a.y1, b.y1);
  const double hx2 = std::max(a.x2, b.x2), hy2 = std::max(a.y2, b.y2);

  std::vector<double> ax(kGrid), bx(kGrid), hx(kGrid);
  std::vector<double> ay(kGrid), by(kGrid), hy(kGrid);
  for (int i = 0; i < kGrid; ++i) {
    ax[i] = cell_overlap(a.x1, a.x2, i);
    bx[i] = cell_overlap(b.x1, b.x2, i);
    hx[i] = cell_overlap(hx1, hx2, i);
    ay[i] = cell_overlap(a.y1, a.y2, i);
    by[i] = cell_overlap(b.y1, b.y2, i);
    hy[i] = cell_overlap(hy1, hy2, i);
  }

  double area_a = 0.0, area_b = 0.0, inter = 0.0, hull = 0.0;
  for (int gy = 0; gy < kGrid; ++gy) {
    for (int gx = 0; gx < kGrid; ++gx) {
      area_a += ax[gx] * ay[gy];
      area_b += bx[gx] * by[gy];
      inter += std::min(ax[gx], bx[gx]) * std::min(ay[gy], by[gy]);
      hull += hx[gx] * hy[gy];
    }
  }
  const double uni = area_a + area_b - inter;
  RasterResult r;
  r.iou = uni < 1e-8 ? 0.0 : inter / uni;
  r.giou = r.iou - (hull < 1e-8 ? 0.0 : (hull - uni) / hull);
  return r;
}

double giou_loss_value(const BoundingBox& pred, const BoundingBox& gt) {
  Tape t;
  return giou_loss(t, box_tensor(pred), box_tensor(gt)).value();
}

}  // namespace

TEST_CASE("iou closed forms") {
  BoundingBox a{0.5, 0.5, 0.4, 0.3};
  CHECK(iou(a, a) == 1.0);

  //  1x1 boxes at x-offsets 0 and 0.5, scaled into the unit frame
  BoundingBox p{1.0 / 3, 1.0 / 3, 2.0 / 3, 2.0 / 3};
  BoundingBox q{2.0 / 3, 1.0 / 3, 2.0 / 3, 2.0 / 3};
  CHECK(iou(p, q) == doctest::Approx(1.0 / 3).epsilon(1e-12));

  BoundingBox far{0.9, 0.9, 0.1, 0.1};
  BoundingBox near{0.1, 0.1, 0.1, 0.1};
  CHECK(iou(far, near) == 0.0);

  BoundingBox degenerate{0.5, 0.5, 0.0, 0.0};
  CHECK(iou(degenerate, degenerate) == 0.0);

  CHECK(in_frame(a));
  CHECK(!in_frame(BoundingBox{0.05, 0.5, 0.2, 0.2}));
}

TEST_CASE("smooth_l1 closed forms and kink agreement") {
  Tape t;
  Tensor b = box_tensor({0.4, 0.6, 0.2, 0.3});
  CHECK(smooth_l1(t, b, b).value() == 0.0);

  Tensor gt = Tensor::from_data({4}, {0.0, 0.0, 0.0, 0.0});
  CHECK(smooth_l1(t, Tensor::from_data({4}, {0.5, 0, 0, 0}), gt).value() ==
        doctest::Approx(0.125).epsilon(1e-15));
  CHECK(smooth_l1(t, Tensor::from_data({4}, {2, 0, 0, 0}), gt).value() ==
        doctest::Approx(1.5).epsilon(1e-15));

  // quadratic and linear pieces meet at |delta| = 1 in value and slope
  Tape t2;
  Tensor pred = Tensor::from_data({4}, {1.0, 0, 0, 0}, true);
  Tensor loss = smooth_l1(t2, pred, gt);
  CHECK(loss.value() == doctest::Approx(0.5));
  t2.backward(loss);
  CHECK(pred.grad()[0] == 1.0);

  CHECK_THROWS_AS(smooth_l1(t, Tensor::zeros({3}), gt), ShapeError);
}

TEST_CASE("giou_loss hand geometry oracles") {
  BoundingBox same{0.4, 0.45, 0.3, 0.2};
  CHECK(giou_loss_value(same, same) == 0.0);

  BoundingBox a{0.3, 0.3, 0.2, 0.2};
  BoundingBox b{0.7, 0.7, 0.2, 0.2};
  CHECK(giou_loss_value(a, b) ==
        doctest::Approx(1.0 + 0.28 / 0.36).epsilon(1e-4));

  //  2x2 corner boxes at offsets (0,0) and (1,1), scaled into the unit frame
  BoundingBox p{1.0 / 3, 1.0 / 3, 2.0 / 3, 2.0 / 3};
  BoundingBox q{2.0 / 3, 2.0 / 3, 2.0 / 3, 2.0 / 3};
  const double loss = giou_loss_value(p, q);
  CHECK(loss == doctest::Approx(1.0 + 5.0 / 63.0).epsilon(1e-4));
  CHECK(1.0 - loss == doctest::Approx(1.0 / 7.0 - 2.0 / 9.0).epsilon(1e-4));
}

TEST_CASE("giou_loss degenerate boxes stay finite") {
  BoundingBox gt{0.5, 0.5, 0.4, 0.4};
  BoundingBox flat{0.2, 0.2, 0.0, 0.0};
  const double v = giou_loss_value(flat, gt);
  CHECK(std::isfinite(v));
  CHECK(std::isfinite(giou_loss_value(flat, flat)));

  Tape t;
  Tensor pred = box_tensor(flat).clone(true);
  Tensor loss = giou_loss(t, pred, box_tensor(gt));
  t.backward(loss);
  for (double g : pred.grad()) CHECK(std::isfinite(g));
}

TEST_CASE("giou matches rasterization on random pairs") {
  Rng rng(2024, "giou-oracle");
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const BoundingBox a = random_box(rng);
    const BoundingBox b = random_box(rng);
    const RasterResult r = raster_giou(a, b);
    const double analytic_giou = 1.0 - giou_loss_value(a, b);
    const double analytic_iou = iou(a, b);
    worst = std::max(worst, std::fabs(analytic_giou - r.giou));
    worst = std::max(worst, std::fabs(analytic_iou - r.iou));
  }
  CAPTURE(worst);
  CHECK(worst < 5e-3);
}

TEST_CASE("giou symmetry, bound, range, monotonicity") {
  Rng rng(7, "giou-props");
  for (int i = 0; i < 200; ++i) {
    const BoundingBox a = random_box(rng);
    const BoundingBox b = random_box(rng);
    const double ab = giou_loss_value(a, b);
    const double ba = giou_loss_value(b, a);
    CHECK(ab == ba);
    CHECK(ab >= 0.0);
    CHECK(ab < 2.0);
    CHECK(ab >= 1.0 - iou(a, b) - 1e-12);
  }

  const BoundingBox gt{0.3, 0.5, 0.2, 0.2};
  double prev = -1.0;
  for (int k = 0; k < 30; ++k) {
    BoundingBox pred = gt;
    pred.x = gt.x + 0.015 * k;
    const double v = giou_loss_value(pred, gt);
    CHECK(v >= prev - 1e-12);
    prev = v;
  }
}

TEST_CASE("cosine_loss closed forms and scale invariance") {
  Tape t;
  Tensor u = Tensor::from_data({3}, {0.3, -1.2, 2.0});
  CHECK(cosine_loss(t, u, u).value() == doctest::Approx(0.0).epsilon(1e-12));

  Tensor e1 = Tensor::from_data({2}, {1, 0});
  Tensor e2 = Tensor::from_data({2}, {0, 1});
  CHECK(cosine_loss(t, e1, e2).value() == 1.0);

  Tensor v = Tensor::from_data({2}, {1, 1});
  CHECK(cosine_loss(t, e1, v).value() ==
        doctest::Approx(1.0 - 1.0 / std::sqrt(2.0)).epsilon(1e-12));

  Rng rng(13, "cos-scale");
  for (int i = 0; i < 50; ++i) {
    std::vector<double> uv(6), vv(6);
    for (double& x : uv) x = rng.uniform(-2, 2);
    for (double& x : vv) x = rng.uniform(-2, 2);
    Tensor a = Tensor::from_data({6}, uv);
    Tensor b = Tensor::from_data({6}, vv);
    const double base = cosine_loss(t, a, b).value();
    for (double c : {0.5, 3.0, 1e-3, 1e3}) {
      std::vector<double> scaled = vv;
      for (double& x : scaled) x *= c;
      const double s =
          cosine_loss(t, a, Tensor::from_data({6}, scaled)).value();
      CHECK(std::fabs(s - base) < 1e-12);
    }
  }

  Tensor zero = Tensor::zeros({3});
  const double z = cosine_loss(t, zero, u).value();
  CHECK(std::isfinite(z));
  CHECK_THROWS_AS(cosine_loss(t, e1, u), ShapeError);
}

TEST_CASE("l1 distillation variant is mean absolute difference") {
  Tape t;
  Tensor u = Tensor::from_data({2}, {1, 2});
  Tensor v = Tensor::from_data({2}, {2, 4});
  CHECK(l1_loss(t, u, v).value() == doctest::Approx(1.5));
  CHECK(l1_loss(t, u, u).value() == 0.0);
}

TEST_CASE("distillation modes gate each term exactly") {
  Tape t;
  Rng rng(21, "distill");
  std::vector<double> sv(8), tv(8);
  for (double& x : sv) x = rng.uniform(-2, 2);
  for (double& x : tv) x = rng.uniform(-2, 2);
  Tensor pv = Tensor::from_data({8}, sv);
  Tensor pl = Tensor::from_data({8}, tv);
  Tensor die = Tensor::from_data({8}, tv);
  Tensor dte = Tensor::from_data({8}, sv);

  auto both = distillation_loss(t, pv, pl, die, dte, DistillMode::both,
                                DistillKind::cosine);
  CHECK(both.first.value() > 0.0);
  CHECK(both.second.value() > 0.0);

  auto img = distillation_loss(t, pv, pl, die, dte, DistillMode::image_only,
                               DistillKind::cosine);
  CHECK(img.second.value() == 0.0);
  CHECK(img.first.value() == both.first.value());

  auto txt = distillation_loss(t, pv, pl, die, dte, DistillMode::text_only,
                               DistillKind::cosine);
  CHECK(txt.first.value() == 0.0);
  CHECK(txt.second.value() == both.second.value());

  auto none = distillation_loss(t, pv, pl, die, dte, DistillMode::none,
                                DistillKind::cosine);
  CHECK(none.first.value() == 0.0);
  CHECK(none.second.value() == 0.0);

  auto equal = distillation_loss(t, pv, pl, pv, pl, DistillMode::both,
                                 DistillKind::cosine);
  CHECK(equal.first.value() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(equal.second.value() == doctest::Approx(0.0).epsilon(1e-12));

  Rng draws(22, "distill-range");
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> a(8), b(8);
    for (double& x : a) x = draws.uniform(-2, 2);
    for (double& x : b) x = draws.uniform(-2, 2);
    auto p = distillation_loss(t, Tensor::from_data({8}, a),
                               Tensor::from_data({8}, b),
                               Tensor::from_data({8}, b),
                               Tensor::from_data({8}, a), DistillMode::both,
                               DistillKind::cosine);
    CHECK(p.first.value() >= 0.0);
    CHECK(p.first.value() <= 2.0);
    CHECK(p.second.value() >= 0.0);
    CHECK(p.second.value() <= 2.0);
  }
}

TEST_CASE("distillation mode parsing") {
  CHECK(parse_distill_mode("both") == DistillMode::both);
  CHECK(parse_distill_mode("image_only") == DistillMode::image_only);
  CHECK(parse_distill_mode("text_only") == DistillMode::text_only);
  CHECK(parse_distill_mode("none") == DistillMode::none);
  CHECK_THROWS_AS(parse_distill_mode("img"), ConfigError);
  CHECK(parse_distill_kind("cosine") == DistillKind::cosine);
  CHECK(parse_distill_kind("l1") == DistillKind::l1);
  CHECK_THROWS_AS(parse_distill_kind("l2"), ConfigError);
  CHECK(to_string(DistillMode::image_only) == "image_only");
  CHECK(to_string(DistillKind::l1) == "l1");
}

TEST_CASE("total_loss breakdown identity") {
  Tape t;
  LossWeights w;  // alpha 1.5, beta 2, lambda 1
  Tensor pred = box_tensor({0.45, 0.55, 0.3, 0.25});
  Tensor gt = box_tensor({0.5, 0.5, 0.4, 0.3});
  Tensor di = Tensor::scalar(0.37);
  Tensor dt = Tensor::scalar(0.21);
  TotalLoss tl = total_loss(t, pred, gt, di, dt, w);
  const LossBreakdown& v = tl.values;
  CHECK(v.total == v.smooth_l1 + w.lambda * v.giou + w.alpha * v.distill_image +
                       w.beta * v.distill_text);
  CHECK(v.total == tl.node.value());
  CHECK(v.distill_image == 0.37);
  CHECK(v.distill_text == 0.21);

  LossWeights w0;
  w0.lambda = 0.0;
  TotalLoss tl0 = total_loss(t, pred, gt, di, dt, w0);
  CHECK(tl0.values.total ==
        tl0.values.smooth_l1 + w0.alpha * 0.37 + w0.beta * 0.21);
  CHECK(tl0.values.giou == tl.values.giou);  // component still reported

  Tensor zero = Tensor::scalar(0.0);
  TotalLoss perfect = total_loss(t, gt, gt, zero, zero, w);
  CHECK(perfect.values.total == 0.0);

  LossWeights bad;
  bad.alpha = -1.0;
  CHECK_THROWS_AS(total_loss(t, pred, gt, di, dt, bad), ParamError);
}

TEST_CASE("loss gradients match finite differences") {
  Tensor gt = box_tensor({0.5, 0.5, 0.4, 0.3});

  FdReport s = finite_diff_check(
      [&](Tape& t, const Tensor& x) { return smooth_l1(t, x, gt); },
      box_tensor({0.45, 0.62, 0.3, 0.25}), 1e-5, 1e-5);
  CHECK(s.pass);

  FdReport g_overlap = finite_diff_check(
      [&](Tape& t, const Tensor& x) { return giou_loss(t, x, gt); },
      box_tensor({0.44, 0.56, 0.31, 0.27}), 1e-5, 1e-5);
  CHECK(g_overlap.pass);

  FdReport g_disjoint = finite_diff_check(
      [&](Tape& t, const Tensor& x) { return giou_loss(t, x, gt); },
      box_tensor({0.1, 0.12, 0.11, 0.13}), 1e-5, 1e-5);
  CHECK(g_disjoint.pass);

  Tensor target = Tensor::from_data({6}, {0.3, -0.7, 1.1, 0.4, -0.2, 0.9});
  FdReport c = finite_diff_check(
      [&](Tape& t, const Tensor& x) { return cosine_loss(t, x, target); },
      Tensor::from_data({6}, {1.0, 0.5, -0.3, 0.8, -1.1, 0.2}), 1e-5, 1e-5);
  CHECK(c.pass);
  FdReport c2 = finite_diff_check(
      [&](Tape& t, const Tensor& x) { return cosine_loss(t, target, x); },
      Tensor::from_data({6}, {1.0, 0.5, -0.3, 0.8, -1.1, 0.2}), 1e-5, 1e-5);
  CHECK(c2.pass);

  FdReport l1 = finite_diff_check(
      [&](Tape& t, const Tensor& x) { return l1_loss(t, x, target); },
      Tensor::from_data({6}, {1.0, 0.5, -0.3, 0.8, -1.1, 0.2}), 1e-5, 1e-5);
  CHECK(l1.pass);

  Tensor pl = Tensor::from_data({6}, {0.2, 0.4, -0.5, 0.9, 0.1, -0.6});
  Tensor die = Tensor::from_data({6}, {-0.4, 0.8, 0.3, -0.9, 0.5, 0.7});
  Tensor dte = Tensor::from_data({6}, {0.6, -0.2, 0.9, 0.3, -0.8, 0.1});
  LossWeights w;
  FdReport comb = finite_diff_check(
      [&](Tape& t, const Tensor& x) {
        auto d = distillation_loss(t, x, pl, die, dte, DistillMode::both,
                                   DistillKind::cosine);
        return t.add(t.scale(d.first, w.alpha), t.scale(d.second, w.beta));
      },
      Tensor::from_data({6}, {1.0, 0.5, -0.3, 0.8, -1.1, 0.2}), 1e-5, 1e-5);
  CHECK(comb.pass);

  FdReport total = finite_diff_check(
      [&](Tape& t, const Tensor& x) {
        auto d = distillation_loss(t, x, t.scale(x, -1.0), die, dte,
                                   DistillMode::both, DistillKind::cosine);
        Tensor pred = t.sigmoid(t.adaptive_avg_pool1d(x, 4));
        return total_loss(t, pred, gt, d.first, d.second, w).node;
      },
      Tensor::from_data({6}, {-0.2, 0.3, -0.4, -0.8, 0.5, 0.1}), 1e-5, 1e-5);
  CHECK(total.pass);
}
