#include "epmvg/losses.hpp"

#include <cmath>

#include "epmvg/errors.hpp"

namespace epmvg::vg {

namespace {

constexpr double kAreaEps = 1e-8;
constexpr double kNormEps = 1e-8;

void check_box(const char* op, const Tensor& b) {
  if (b.ndim() != 1 || b.dim(0) != 4)
    throw ShapeError(std::string(op) + " expects a length-4 box tensor, got " +
                     numcore::shape_str(b.shape()));
}

void check_same_width(const char* op, const Tensor& u, const Tensor& v) {
  if (u.ndim() != 1 || v.ndim() != 1 || u.dim(0) != v.dim(0))
    throw ShapeError(std::string(op) + " expects two vectors of equal width, got " +
                     numcore::shape_str(u.shape()) + " and " +
                     numcore::shape_str(v.shape()));
}

struct BoxNodes {
  Tensor x1, y1, x2, y2;
};

BoxNodes corners_on_tape(Tape& t, const Tensor& b) {
  Tensor x = t.element(b, 0);
  Tensor y = t.element(b, 1);
  Tensor hw = t.scale(t.element(b, 2), 0.5);
  Tensor hh = t.scale(t.element(b, 3), 0.5);
  return {t.sub(x, hw), t.sub(y, hh), t.add(x, hw), t.add(y, hh)};
}

}  // namespace

void validate(const LossWeights& w) {
  for (double v : {w.alpha, w.beta, w.lambda}) {
    if (!std::isfinite(v) || v < 0.0)
      throw ParamError("loss weights must be finite and non-negative");
  }
}

DistillMode parse_distill_mode(const std::string& s) {
  if (s == "both") return DistillMode::both;
  if (s == "image_only") return DistillMode::image_only;
  if (s == "text_only") return DistillMode::text_only;
  if (s == "none") return DistillMode::none;
  throw ConfigError("unknown distillation mode '" + s +
                    "' (expected both, image_only, text_only or none)");
}

DistillKind parse_distill_kind(const std::string& s) {
  if (s == "cosine") return DistillKind::cosine;
  if (s == "l1") return DistillKind::l1;
  throw ConfigError("unknown distillation kind '" + s +
                    "' (expected cosine or l1)");
}

std::string to_string(DistillMode m) {
  switch (m) {
    case DistillMode::both: return "both";
    case DistillMode::image_only: return "image_only";
    case DistillMode::text_only: return "text_only";
    case DistillMode::none: return "none";
  }
  throw ConfigError("invalid distillation mode value");
}

std::string to_string(DistillKind k) {
  switch (k) {
    case DistillKind::cosine: return "cosine";
    case DistillKind::l1: return "l1";
  }
  throw ConfigError("invalid distillation kind value");
}

Tensor smooth_l1(Tape& t, const Tensor& pred, const Tensor& gt) {
  check_box("smooth_l1", pred);
  check_box("smooth_l1", gt);
  return t.sum(t.huber_unit(t.sub(pred, gt)));
}

Tensor giou_loss(Tape& t, const Tensor& pred, const Tensor& gt) {
  check_box("giou_loss", pred);
  check_box("giou_loss", gt);
  const BoxNodes a = corners_on_tape(t, pred);
  const BoxNodes b = corners_on_tape(t, gt);

  Tensor zero = Tensor::scalar(0.0);
  Tensor iw = t.maximum(t.sub(t.minimum(a.x2, b.x2), t.maximum(a.x1, b.x1)), zero);
  Tensor ih = t.maximum(t.sub(t.minimum(a.y2, b.y2), t.maximum(a.y1, b.y1)), zero);
  Tensor inter = t.mul(iw, ih);

  Tensor area_a = t.mul(t.sub(a.x2, a.x1), t.sub(a.y2, a.y1));
  Tensor area_b = t.mul(t.sub(b.x2, b.x1), t.sub(b.y2, b.y1));
  Tensor uni = t.sub(t.add(area_a, area_b), inter);
  Tensor iou = t.div(inter, t.max_scalar(uni, kAreaEps));

  Tensor cw = t.sub(t.maximum(a.x2, b.x2), t.minimum(a.x1, b.x1));
  Tensor ch = t.sub(t.maximum(a.y2, b.y2), t.minimum(a.y1, b.y1));
  Tensor c_area = t.mul(cw, ch);
  Tensor hull_gap = t.div(t.sub(c_area, uni), t.max_scalar(c_area, kAreaEps));

  Tensor giou = t.sub(iou, hull_gap);
  return t.add_scalar(t.neg(giou), 1.0);
}

Tensor cosine_loss(Tape& t, const Tensor& u, const Tensor& v) {
  check_same_width("cosine_loss", u, v);
  Tensor dot = t.sum(t.mul(u, v));
  Tensor nu = t.max_scalar(t.sqrt(t.sum(t.mul(u, u))), kNormEps);
  Tensor nv = t.max_scalar(t.sqrt(t.sum(t.mul(v, v))), kNormEps);
  return t.add_scalar(t.neg(t.div(dot, t.mul(nu, nv))), 1.0);
}

Tensor l1_loss(Tape& t, const Tensor& u, const Tensor& v) {
  check_same_width("l1_loss", u, v);
  return t.mean(t.abs(t.sub(u, v)));
}

std::pair<Tensor, Tensor> distillation_loss(Tape& t, const Tensor& p_v1,
                                            const Tensor& p_l1,
                                            const Tensor& pooled_die,
                                            const Tensor& pooled_dte,
                                            DistillMode mode,
                                            DistillKind kind) {
  const bool image = mode == DistillMode::both || mode == DistillMode::image_only;
  const bool text = mode == DistillMode::both || mode == DistillMode::text_only;
  auto term = [&](const Tensor& s, const Tensor& target) {
    return kind == DistillKind::cosine ? cosine_loss(t, s, target)
                                       : l1_loss(t, s, target);
  };
  Tensor img = image ? term(p_v1, pooled_die) : Tensor::scalar(0.0);
  Tensor txt = text ? term(p_l1, pooled_dte) : Tensor::scalar(0.0);
  return {img, txt};
}

TotalLoss combine_components(Tape& t, const Tensor& smooth, const Tensor& giou,
                             const Tensor& distill_image,
                             const Tensor& distill_text,
                             const LossWeights& w) {
  validate(w);
  Tensor node = t.add(t.add(t.add(smooth, t.scale(giou, w.lambda)),
                            t.scale(distill_image, w.alpha)),
                      t.scale(distill_text, w.beta));
  LossBreakdown v;
  v.smooth_l1 = smooth.value();
  v.giou = giou.value();
  v.distill_image = distill_image.value();
  v.distill_text = distill_text.value();
  v.total = node.value();
  return {node, v};
}

TotalLoss total_loss(Tape& t, const Tensor& pred_box, const Tensor& gt_box,
                     const Tensor& distill_image, const Tensor& distill_text,
                     const LossWeights& w) {
  Tensor s = smooth_l1(t, pred_box, gt_box);
  Tensor g = giou_loss(t, pred_box, gt_box);
  return combine_components(t, s, g, distill_image, distill_text, w);
}

}  // namespace epmvg::vg
