#pragma once

#include <algorithm>

namespace meaf {

/// Axis-aligned box in pixel coordinates (corners).
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  static Box from_center(double cx, double cy, double w, double h) {
    return Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  }
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return (x1 + x2) / 2; }
  double cy() const { return (y1 + y2) / 2; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// Annotation in normalized image coordinates (center, size in [0,1]).
struct GroundTruthBox {
  int class_id = 0;
  double cx = 0, cy = 0, w = 0, h = 0;

  Box to_pixels(double image_w, double image_h) const {
    return Box::from_center(cx * image_w, cy * image_h, w * image_w, h * image_h);
  }

  friend bool operator==(const GroundTruthBox&, const GroundTruthBox&) = default;
};

/// Ground-truth box in pixel coordinates.
struct LabeledBox {
  Box box;
  int class_id = 0;
};

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

}  // namespace meaf
