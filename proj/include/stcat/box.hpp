#pragma once

#include <algorithm>
#include <array>

namespace stcat {

/// Normalized (center x, center y, width, height) box.
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  // From corners, like the intersection and enclosure terms.
  double area() const { return std::max(0.0, x2() - x1()) * std::max(0.0, y2() - y1()); }

  std::array<double, 4> as_array() const { return {cx, cy, w, h}; }
  bool operator==(const Box&) const = default;
};

inline double intersection_area(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  return iw * ih;
}

/// Intersection over union; 0 when the union has no area.
inline double box_iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// IoU minus the share of the enclosing box not covered by the union.
inline double giou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const double iou = uni > 0.0 ? inter / uni : 0.0;
  const double ew = std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1());
  const double eh = std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1());
  const double enc = std::max(0.0, ew) * std::max(0.0, eh);
  return enc > 0.0 ? iou - (enc - uni) / enc : iou;
}

}  // namespace stcat
