#pragma once

#include <string>

#include "orthotrace/geodesy.hpp"

namespace orthotrace::formats {

/// Anchor of a topocentric reconstruction frame in UTM: world easting =
/// local x + offset_x, northing = local y + offset_y.
struct GeoOffset {
    int zone = 0;
    Hemisphere hemisphere = Hemisphere::North;
    double offset_x = 0;
    double offset_y = 0;

    Crs crs() const { return Crs::utm(zone, hemisphere); }
};

/// Two lines: `UTM 15N` (or a WKT tag naming the zone), then two reals.
GeoOffset parse_geo_offset(const std::string& text);
GeoOffset read_geo_offset(const std::string& path);
void write_geo_offset(const GeoOffset& g, const std::string& path);

}  // namespace orthotrace::formats
