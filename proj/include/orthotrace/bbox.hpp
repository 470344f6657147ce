#pragma once

#include <algorithm>
#include <cmath>

namespace orthotrace {

/// Axis-aligned pixel rectangle, COCO convention: (x, y) is the top-left
/// corner in pixel-edge coordinates, so a box covering the whole image is
/// (0, 0, width, height).
struct BBox {
    double x = 0;
    double y = 0;
    double w = 0;
    double h = 0;

    double x2() const { return x + w; }
    double y2() const { return y + h; }
    double area() const { return w * h; }
    bool valid() const { return std::isfinite(x) && std::isfinite(y) && w > 0 && h > 0 && std::isfinite(w) && std::isfinite(h); }

    friend bool operator==(const BBox&, const BBox&) = default;
};

/// Intersection of two boxes; zero-sized (w or h == 0) when disjoint.
inline BBox intersect(const BBox& a, const BBox& b)
{
    const double x1 = std::max(a.x, b.x), y1 = std::max(a.y, b.y);
    const double x2 = std::min(a.x2(), b.x2()), y2 = std::min(a.y2(), b.y2());
    return {x1, y1, std::max(0.0, x2 - x1), std::max(0.0, y2 - y1)};
}

inline double iou(const BBox& a, const BBox& b)
{
    const double inter = intersect(a, b).area();
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

}  // namespace orthotrace
