#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "orthotrace/geodesy.hpp"

namespace orthotrace::formats {

/// One pixel observation of a ground control point.
struct GcpEntry {
    double geo_x = 0;
    double geo_y = 0;
    double geo_z = 0;
    double im_x = 0;
    double im_y = 0;
    std::string image_name;
    std::string gcp_id;  // optional trailing column

    friend bool operator==(const GcpEntry&, const GcpEntry&) = default;
};

struct GcpList {
    std::string projection;
    std::vector<GcpEntry> entries;
};

/// Image dimensions keyed by image name, used for bounds checks.
using ImageDims = std::map<std::string, std::pair<int, int>>;

/// Throws InvalidArgument when a pixel lies outside [0, width] x [0, height]
/// of its image (images missing from `dims` are not checked).
void check_gcp_bounds(const std::vector<GcpEntry>& entries, const ImageDims& dims);

/// Numbers are written with at least three decimals.
std::string format_gcp_list(const std::vector<GcpEntry>& entries, const std::string& proj_line);
void write_gcp_list(const std::vector<GcpEntry>& entries, const std::string& proj_line, const std::string& path,
                    const ImageDims& dims = {});

GcpList parse_gcp_list(const std::string& text);
GcpList read_gcp_list(const std::string& path);

/// Projection line for a UTM zone ("WGS84 UTM 15N").
std::string gcp_projection_line(const Crs& crs);

}  // namespace orthotrace::formats
