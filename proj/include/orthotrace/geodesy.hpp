#pragma once

#include <optional>
#include <string>

namespace orthotrace {

enum class Hemisphere { North, South };

/// WGS84 geographic position in decimal degrees.
struct GeoPoint {
    double lat = 0;
    double lon = 0;
    std::optional<double> alt;  // meters above the ellipsoid

    /// Throws InvalidArgument for NaN or out-of-range coordinates.
    void validate() const;
};

/// WGS84 / UTM projected position.
struct UtmCoord {
    double easting = 0;
    double northing = 0;
    int zone = 0;
    Hemisphere hemisphere = Hemisphere::North;

    void validate() const;
};

/// Coordinate reference system tag attached to rasters and vector outputs.
/// Only geographic WGS84 and the WGS84 UTM zones are supported.
struct Crs {
    enum class Kind { Wgs84, Utm };

    Kind kind = Kind::Utm;
    int zone = 0;
    Hemisphere hemisphere = Hemisphere::North;

    static Crs wgs84() { return {Kind::Wgs84, 0, Hemisphere::North}; }
    static Crs utm(int zone, Hemisphere h) { return {Kind::Utm, zone, h}; }

    /// Accepts "WGS84", "UTM 15 N", "UTM 15N", "WGS84 UTM 15N", "EPSG:32615"
    /// and WKT strings naming a "UTM zone 15N".
    static Crs parse(const std::string& text);

    int epsg() const;
    std::string to_string() const;  // "UTM 15 N" / "WGS84"
    std::string to_wkt() const;      // ESRI-flavoured WKT for .prj files

    friend bool operator==(const Crs&, const Crs&) = default;
};

/// Zone number the standard 6-degree grid assigns to a longitude.
int utm_zone_for(double lon);

/// Central meridian of a UTM zone in degrees.
double utm_central_meridian(int zone);

/// Transverse Mercator forward mapping on the WGS84 ellipsoid using the
/// 6th-order Krueger series. Latitudes beyond +/-84 degrees are rejected.
UtmCoord wgs84_to_utm(const GeoPoint& p, std::optional<int> forced_zone = std::nullopt);

/// Inverse of wgs84_to_utm. The returned point has no altitude.
GeoPoint utm_to_wgs84(const UtmCoord& u);

/// Planar world position (meters in the raster/vector CRS).
struct WorldXY {
    double x = 0;
    double y = 0;
};

/// Fractional raster position. Integer values address pixel centers: (0, 0)
/// is the center of the top-left pixel, (-0.5, -0.5) its outer corner.
struct PixelXY {
    double col = 0;
    double row = 0;
};

/// Affine raster-to-world mapping in the pixel-center convention (the same
/// convention as ESRI world files):
///   x = origin_x + col * pixel_w + row * rot_x
///   y = origin_y + col * rot_y   + row * pixel_h
struct AffineGeotransform {
    double origin_x = 0;
    double origin_y = 0;
    double pixel_w = 1;
    double pixel_h = -1;
    double rot_x = 0;
    double rot_y = 0;

    double determinant() const { return pixel_w * pixel_h - rot_x * rot_y; }
    bool invertible() const;

    friend bool operator==(const AffineGeotransform&, const AffineGeotransform&) = default;
};

WorldXY pixel_to_world(const AffineGeotransform& gt, double col, double row);

/// Throws InvalidArgument when the transform is singular.
PixelXY world_to_pixel(const AffineGeotransform& gt, double x, double y);

/// Reads a six-line ESRI world file (A, D, B, E, C, F).
AffineGeotransform read_world_file(const std::string& path);
void write_world_file(const AffineGeotransform& gt, const std::string& path);

}  // namespace orthotrace
