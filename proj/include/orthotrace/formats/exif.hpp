#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "orthotrace/geodesy.hpp"

namespace orthotrace::formats {

/// Capture time and (optional) GPS position decoded from a JPEG's EXIF block.
struct ExifGpsRecord {
    std::string image_path;
    double timestamp = 0;  // UTC seconds since the Unix epoch
    std::optional<GeoPoint> gps;
};

/// Parses DateTimeOriginal (plus SubSecTimeOriginal and OffsetTimeOriginal
/// when present). Throws ParseError for a missing APP1 block, malformed IFD
/// offsets or a missing DateTimeOriginal.
ExifGpsRecord read_exif(const std::string& path);
ExifGpsRecord parse_exif(std::span<const uint8_t> jpeg, const std::string& image_path = {});

/// GPS position only; nullopt when the image has no EXIF or no GPS IFD.
std::optional<GeoPoint> read_exif_gps(const std::string& path);
std::optional<GeoPoint> parse_exif_gps(std::span<const uint8_t> jpeg);

/// Writes GPSLatitude/GPSLongitude (and GPSAltitude when `p.alt` is set)
/// as degree/minute/second rationals, seconds with denominator 10000.
/// Only the EXIF block changes: the GPS IFD is appended to the TIFF data and
/// the IFD0 pointer patched; every other byte of the file is preserved. If
/// the file already carries exactly these values nothing is written.
/// Returns true when the file changed.
bool write_exif_gps(const std::string& path, const GeoPoint& p);

/// In-memory form of write_exif_gps; returns the input unchanged when the
/// GPS values already match.
std::vector<uint8_t> embed_exif_gps(std::span<const uint8_t> jpeg, const GeoPoint& p);

/// Width and height from the JPEG start-of-frame marker.
std::pair<int, int> jpeg_dimensions(const std::string& path);
std::pair<int, int> jpeg_dimensions(std::span<const uint8_t> jpeg);

/// "YYYY:MM:DD HH:MM:SS" interpreted as UTC, in seconds since the epoch.
double parse_exif_datetime(const std::string& text);

}  // namespace orthotrace::formats
