#pragma once

namespace epmvg::vg {

// Normalized box, (x, y) at the center, all components in [0,1].
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
};

struct Corners {
  double x1, y1, x2, y2;
};

Corners to_corners(const BoundingBox& b);

// True when the whole extent lies inside the unit frame.
bool in_frame(const BoundingBox& b);

// Plain intersection-over-union used by evaluation; not differentiable.
// Degenerate zero-area pairs yield 0.
double iou(const BoundingBox& a, const BoundingBox& b);

}  // namespace epmvg::vg
