#pragma once

#include <optional>

namespace aldot {

/// Normalized center-format box, the darknet label convention.
///
/// cx, cy are the center as fractions of frame width/height; w, h are the
/// extents as fractions. Boxes may overhang the frame edge (cx = 0 with
/// w = 0.2 is legal); clipping happens when converting to pixels.
struct BoundingBox {
  int class_id = 0;
  double cx = 0.5;
  double cy = 0.5;
  double w = 0.0;
  double h = 0.0;
  std::optional<double> confidence;

  bool operator==(const BoundingBox&) const = default;
};

/// Corner-format box in pixel coordinates of a specific frame (cv2 style).
struct PixelBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;
  int frame_width = 0;
  int frame_height = 0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept { return width() * height(); }

  bool operator==(const PixelBox&) const = default;
};

/// Throws ValidationError if the box violates its invariants.
void validate(const BoundingBox& box);
void validate(const PixelBox& box);

bool is_valid(const BoundingBox& box) noexcept;

/// Converts to pixel corners and clips to the frame.
PixelBox to_pixel(const BoundingBox& box, int width, int height);

/// Inverse of to_pixel for boxes that were not clipped. Class id and
/// confidence are not part of a PixelBox; they come back as defaults.
BoundingBox to_normalized(const PixelBox& pbox);

/// Intersection over union. Boxes that only share an edge score 0.
/// Pixel boxes must come from frames of the same size.
double iou(const PixelBox& a, const PixelBox& b);

/// IoU in normalized space, each box clipped to the unit square first.
double iou(const BoundingBox& a, const BoundingBox& b);

}  // namespace aldot
