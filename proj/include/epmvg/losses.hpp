#pragma once

#include <string>
#include <utility>

#include "epmvg/tape.hpp"
#include "epmvg/tensor.hpp"

namespace epmvg::vg {

using numcore::Tape;
using numcore::Tensor;

struct LossWeights {
  double alpha = 1.5;   // image distillation weight
  double beta = 2.0;    // text distillation weight
  double lambda = 1.0;  // box-overlap loss weight
};

// All finite and non-negative; throws ParamError otherwise.
void validate(const LossWeights& w);

// Component values plus their weighted sum. `total` always equals
// smooth_l1 + lambda*giou + alpha*distill_image + beta*distill_text exactly,
// because it is produced by that expression.
struct LossBreakdown {
  double smooth_l1 = 0.0;
  double giou = 0.0;
  double distill_image = 0.0;
  double distill_text = 0.0;
  double total = 0.0;
};

struct TotalLoss {
  Tensor node;  // scalar on the tape, drives backward
  LossBreakdown values;
};

enum class DistillMode { both, image_only, text_only, none };
enum class DistillKind { cosine, l1 };

DistillMode parse_distill_mode(const std::string& s);
DistillKind parse_distill_kind(const std::string& s);
std::string to_string(DistillMode m);
std::string to_string(DistillKind k);

// Boxes are length-4 tensors (x, y, w, h), center format, normalized.
// Sum over the four coordinates of the unit-threshold huber kernel.
Tensor smooth_l1(Tape& t, const Tensor& pred, const Tensor& gt);

// 1 - GIoU with the smallest enclosing axis-aligned box; center boxes are
// converted to corners inside the graph so the whole loss differentiates
// through the prediction. Areas are epsilon-floored, never NaN.
Tensor giou_loss(Tape& t, const Tensor& pred, const Tensor& gt);

// 1 - u.v / (||u|| ||v||), norms floored at 1e-8.
Tensor cosine_loss(Tape& t, const Tensor& u, const Tensor& v);

// Mean absolute elementwise difference.
Tensor l1_loss(Tape& t, const Tensor& u, const Tensor& v);

// (image term, text term); a disabled modality is exactly the constant 0.
std::pair<Tensor, Tensor> distillation_loss(Tape& t, const Tensor& p_v1,
                                            const Tensor& p_l1,
                                            const Tensor& pooled_die,
                                            const Tensor& pooled_dte,
                                            DistillMode mode,
                                            DistillKind kind);

// Assembles smooth_l1 + lambda*giou + alpha*di + beta*dt on the tape and
// mirrors the same arithmetic into the returned breakdown, so the recorded
// total matches a recomputation from the components bit for bit.
TotalLoss total_loss(Tape& t, const Tensor& pred_box, const Tensor& gt_box,
                     const Tensor& distill_image, const Tensor& distill_text,
                     const LossWeights& w);

// Same assembly from already-reduced component nodes (used for batch means).
TotalLoss combine_components(Tape& t, const Tensor& smooth, const Tensor& giou,
                             const Tensor& distill_image,
                             const Tensor& distill_text, const LossWeights& w);

}  // namespace epmvg::vg
