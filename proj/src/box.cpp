#include "epmvg/box.hpp"

#include <algorithm>

namespace epmvg::vg {

Corners to_corners(const BoundingBox& b) {
  return {b.x - b.w / 2.0, b.y - b.h / 2.0, b.x + b.w / 2.0, b.y + b.h / 2.0};
}

bool in_frame(const BoundingBox& b) {
  const Corners c = to_corners(b);
  return c.x1 >= 0.0 && c.y1 >= 0.0 && c.x2 <= 1.0 && c.y2 <= 1.0 &&
         b.w >= 0.0 && b.h >= 0.0;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const Corners ca = to_corners(a), cb = to_corners(b);
  const double iw =
      std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1));
  const double ih =
      std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
  const double inter = iw * ih;
  const double area_a = (ca.x2 - ca.x1) * (ca.y2 - ca.y1);
  const double area_b = (cb.x2 - cb.x1) * (cb.y2 - cb.y1);
  const double uni = area_a + area_b - inter;
  if (uni < 1e-8) return 0.0;
  return inter / uni;
}

}  // namespace epmvg::vg
