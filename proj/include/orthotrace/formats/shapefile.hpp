#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "orthotrace/geodesy.hpp"

namespace orthotrace::formats {

struct Polygon {
    int64_t id = 0;
    std::vector<WorldXY> ring;  // open or closed; orientation is normalized on write
    std::map<std::string, std::optional<double>> fields;
};

/// Axis-aligned rectangle as a polygon ring.
Polygon rectangle_polygon(int64_t id, double min_x, double min_y, double max_x, double max_y);

/// Writes basepath.shp/.shx/.dbf/.prj with shape type 5. Rings are closed
/// and written clockwise. The .dbf carries an integer `id` column plus every
/// numeric field name used by any polygon (width 19, 6 decimals; missing
/// values are blank). Throws InvalidArgument for an empty set or a
/// degenerate or self-intersecting ring.
void write_shapefile(const std::vector<Polygon>& polygons, const Crs& crs, const std::string& basepath);

/// Signed ring area, positive for counter-clockwise rings.
double ring_signed_area(const std::vector<WorldXY>& ring);
bool ring_self_intersects(const std::vector<WorldXY>& ring);

}  // namespace orthotrace::formats
