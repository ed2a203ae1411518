#pragma once

#include <algorithm>

namespace fka {

/// Axis-aligned box in normalized image coordinates.
struct BBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    bool valid() const { return x1 <= x2 && y1 <= y2; }
    double area() const { return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1); }
    bool operator==(const BBox&) const = default;
};

inline double box_iou(const BBox& a, const BBox& b) {
    const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : (a == b ? 1.0 : 0.0);
}

} // namespace fka
