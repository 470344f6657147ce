#pragma once

#include <optional>
#include <string>
#include <vector>

#include "orthotrace/formats/gcp_list.hpp"
#include "orthotrace/geodesy.hpp"

namespace orthotrace {

/// Camera position of an image from its embedded GPS (absent when the image
/// carries none).
struct ImagePosition {
    std::string image;
    std::optional<UtmCoord> pos;
};

struct Candidate {
    std::string image;
    double distance = 0;  // horizontal meters

    friend bool operator==(const Candidate&, const Candidate&) = default;
};

/// Images within `radius` of the GCP ordered by distance, then name. Images
/// in another UTM zone are reprojected into the GCP's zone; images without
/// GPS are skipped with a warning.
std::vector<Candidate> candidate_images(const UtmCoord& gcp, const std::vector<ImagePosition>& images, double radius);

struct SensorSpec {
    int width_px = 0;
    int height_px = 0;
    double focal_norm = 0;  // focal length / max(width, height)
};

/// Half the nadir ground-footprint diagonal at the given flight altitude.
double default_radius(double flight_alt, const SensorSpec& sensor);

struct GroundControlPoint {
    std::string name;
    UtmCoord pos;
    double elevation = 0;
};

/// GCP coordinates as CSV: `name,lat,lon,alt` (WGS84, projected into
/// `zone` or the natural zone of the first point) or
/// `name,easting,northing,elevation,zone,hemisphere`.
std::vector<GroundControlPoint> load_gcp_file(const std::string& path, std::optional<int> zone = std::nullopt);

/// EXIF GPS positions of every JPEG in a directory, in the given zone.
std::vector<ImagePosition> image_positions_from_dir(const std::string& dir, int zone);

struct GcpCandidates {
    GroundControlPoint gcp;
    std::vector<Candidate> candidates;
};

std::vector<GcpCandidates> find_gcp_candidates(const std::vector<GroundControlPoint>& gcps,
                                               const std::vector<ImagePosition>& images, double radius);

/// Checks the georeferencing minimum (at least 3 distinct GCPs, each marked
/// in at least 2 distinct images) and pixel bounds. Throws InvalidArgument
/// below the minimum; returns warnings for GCPs seen in fewer than 3 images.
/// GCPs are identified by gcp_id when set, otherwise by world coordinates.
std::vector<std::string> validate_gcp_marks(const std::vector<formats::GcpEntry>& marks,
                                            const formats::ImageDims& dims);

/// validate_gcp_marks, then write the gcp_list file.
std::vector<std::string> assemble_gcp_list(const std::vector<formats::GcpEntry>& marks, const std::string& proj_line,
                                           const std::string& path, const formats::ImageDims& dims = {});

}  // namespace orthotrace
