#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "orthotrace/geodesy.hpp"

namespace orthotrace {

using Ring = std::vector<WorldXY>;

/// Even-odd crossing test (PNPOLY). Points exactly on the left or bottom
/// edge of an axis-aligned rectangle count as inside, on the right or top
/// edge as outside, so adjacent rectangles partition the plane.
inline bool point_in_ring(const Ring& ring, double x, double y)
{
    bool inside = false;
    const size_t n = ring.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        const WorldXY& a = ring[i];
        const WorldXY& b = ring[j];
        if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x)
            inside = !inside;
    }
    return inside;
}

inline double ring_area(const Ring& ring)
{
    double s = 0;
    for (size_t i = 0, n = ring.size(); i < n; ++i) {
        const WorldXY& a = ring[i];
        const WorldXY& b = ring[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    return std::abs(s) / 2;
}

struct Bounds2 {
    double min_x = std::numeric_limits<double>::infinity();
    double min_y = std::numeric_limits<double>::infinity();
    double max_x = -std::numeric_limits<double>::infinity();
    double max_y = -std::numeric_limits<double>::infinity();

    void add(double x, double y)
    {
        min_x = std::min(min_x, x);
        min_y = std::min(min_y, y);
        max_x = std::max(max_x, x);
        max_y = std::max(max_y, y);
    }
    bool empty() const { return !(max_x >= min_x && max_y >= min_y); }
};

inline Bounds2 ring_bounds(const Ring& ring)
{
    Bounds2 b;
    for (const auto& p : ring)
        b.add(p.x, p.y);
    return b;
}

}  // namespace orthotrace
