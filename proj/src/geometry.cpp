#include "aldot/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "aldot/error.hpp"

namespace aldot {
namespace {

struct Extent {
  double x0, y0, x1, y1;
};

Extent clipped_unit_extent(const BoundingBox& b) {
  return {std::max(0.0, b.cx - b.w / 2), std::max(0.0, b.cy - b.h / 2),
          std::min(1.0, b.cx + b.w / 2), std::min(1.0, b.cy + b.h / 2)};
}

double overlap(const Extent& a, const Extent& b) {
  const double ix = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double iy = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  return ix * iy;
}

double iou_of(const Extent& a, const Extent& b) {
  const double inter = overlap(a, b);
  if (inter == 0.0) return 0.0;
  const double area_a = (a.x1 - a.x0) * (a.y1 - a.y0);
  const double area_b = (b.x1 - b.x0) * (b.y1 - b.y0);
  const double uni = area_a + area_b - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::string describe(const BoundingBox& b) {
  return "box(class=" + std::to_string(b.class_id) + ", cx=" + std::to_string(b.cx) +
         ", cy=" + std::to_string(b.cy) + ", w=" + std::to_string(b.w) +
         ", h=" + std::to_string(b.h) + ")";
}

}  // namespace

bool is_valid(const BoundingBox& b) noexcept {
  const auto in_unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  if (b.class_id < 0) return false;
  if (!in_unit(b.cx) || !in_unit(b.cy)) return false;
  if (!(std::isfinite(b.w) && b.w > 0.0 && b.w <= 1.0)) return false;
  if (!(std::isfinite(b.h) && b.h > 0.0 && b.h <= 1.0)) return false;
  if (b.confidence && !in_unit(*b.confidence)) return false;
  const Extent e = clipped_unit_extent(b);
  return e.x1 > e.x0 && e.y1 > e.y0;
}

void validate(const BoundingBox& b) {
  if (!is_valid(b)) throw ValidationError("invalid " + describe(b));
}

void validate(const PixelBox& p) {
  if (p.frame_width <= 0 || p.frame_height <= 0)
    throw ValidationError("pixel box frame dimensions must be positive");
  const bool finite = std::isfinite(p.x_min) && std::isfinite(p.y_min) &&
                      std::isfinite(p.x_max) && std::isfinite(p.y_max);
  if (!finite || !(p.x_min < p.x_max) || !(p.y_min < p.y_max))
    throw ValidationError("degenerate pixel box");
  if (p.x_min < 0.0 || p.y_min < 0.0 || p.x_max > p.frame_width || p.y_max > p.frame_height)
    throw ValidationError("pixel box lies outside its frame");
}

PixelBox to_pixel(const BoundingBox& box, int width, int height) {
  if (width <= 0 || height <= 0)
    throw ValidationError("frame dimensions must be positive, got " + std::to_string(width) +
                          "x" + std::to_string(height));
  validate(box);
  const double fw = width;
  const double fh = height;
  PixelBox p;
  p.frame_width = width;
  p.frame_height = height;
  p.x_min = std::clamp((box.cx - box.w / 2) * fw, 0.0, fw);
  p.y_min = std::clamp((box.cy - box.h / 2) * fh, 0.0, fh);
  p.x_max = std::clamp((box.cx + box.w / 2) * fw, 0.0, fw);
  p.y_max = std::clamp((box.cy + box.h / 2) * fh, 0.0, fh);
  if (!(p.x_min < p.x_max) || !(p.y_min < p.y_max))
    throw ValidationError("box has zero area after clipping: " + describe(box));
  return p;
}

BoundingBox to_normalized(const PixelBox& pbox) {
  validate(pbox);
  const double fw = pbox.frame_width;
  const double fh = pbox.frame_height;
  BoundingBox b;
  b.cx = (pbox.x_min + pbox.x_max) / (2.0 * fw);
  b.cy = (pbox.y_min + pbox.y_max) / (2.0 * fh);
  b.w = pbox.width() / fw;
  b.h = pbox.height() / fh;
  return b;
}

double iou(const PixelBox& a, const PixelBox& b) {
  if (a.frame_width != b.frame_width || a.frame_height != b.frame_height)
    throw ValidationError("iou: pixel boxes belong to frames of different sizes");
  validate(a);
  validate(b);
  return iou_of({a.x_min, a.y_min, a.x_max, a.y_max}, {b.x_min, b.y_min, b.x_max, b.y_max});
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  validate(a);
  validate(b);
  return iou_of(clipped_unit_extent(a), clipped_unit_extent(b));
}

}  // namespace aldot
