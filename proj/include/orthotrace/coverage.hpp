#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthotrace/formats/reconstruction.hpp"
#include "orthotrace/polygon.hpp"
#include "orthotrace/projector.hpp"
#include "orthotrace/raster.hpp"

namespace orthotrace {

/// Ground footprint of one image.
struct Footprint {
    std::string image_name;
    Ring polygon;         // world quadrilateral (triangle when one corner failed)
    WorldXY center;       // camera ground position (x, y of the camera center)
    bool partial = false;
    int line_id = -1;
    double along = 0;     // camera position along the flight direction
    double across = 0;

    double area() const { return ring_area(polygon); }
};

struct FootprintOptions {
    double ground_z = 0;  // plane used when no DSM is given
    IntersectOptions intersect;
};

/// Casts the four image corners of every shot onto the DSM (or the plane
/// z = ground_z when `dsm` is null). Footprints with fewer than three landed
/// corners are dropped with a warning and listed in `failed`.
std::vector<Footprint> compute_footprints(const formats::Reconstruction& rec, const FrameOffset& offset,
                                          const RasterGrid* dsm, const FootprintOptions& opts = {},
                                          std::vector<std::string>* failed = nullptr);

/// Unit flight direction and across-track axis of a set of camera centers.
struct FlightAxes {
    Eigen::Vector2d along{1, 0};
    Eigen::Vector2d across{0, 1};
};

/// Principal axis of the camera centers, sign-normalized so the result does
/// not depend on input order.
FlightAxes flight_axes(const std::vector<Footprint>& footprints);

/// Assigns line_id, along and across. Lines are numbered by ascending
/// across-track position; consecutive centers farther apart than `line_gap`
/// across-track start a new line. A non-positive gap selects half the median
/// nearest-neighbour distance between camera centers.
FlightAxes cluster_flight_lines(std::vector<Footprint>& footprints, double line_gap = 0,
                                std::optional<FlightAxes> axes = std::nullopt);

struct Interval {
    double lo = 0;
    double hi = 0;
    double length() const { return hi - lo; }
};

struct IntervalCover {
    std::vector<size_t> chosen;  // indices into the input, in walking order
    bool complete = true;        // false when a gap had to be jumped
};

/// Greedy farthest-reach cover of [target_lo, target_hi]. A candidate may
/// follow the previous pick only if it extends the reach and overlaps the
/// previous reach by at least min_overlap times its own length. Ties on
/// reach go to the lower index.
IntervalCover greedy_interval_cover(const std::vector<Interval>& items, double target_lo, double target_hi,
                                    double min_overlap);

struct CoverOptions {
    double min_h_overlap = 0.10;
    double min_v_overlap = 0.10;
    double max_uncovered = 0.01;
    double cell_size = 0;  // 0: 1/20 of the median across-track footprint width
};

struct CoverageGap {
    double area = 0;
    Ring ring;  // bounding rectangle of a connected uncovered region
};

struct CoverageReport {
    std::vector<std::string> selected;  // ordered by (line, along)
    double uncovered_fraction = 0;
    bool best_effort = false;  // max_uncovered could not be met
    double cell_size = 0;
    int lines = 0;
    std::vector<int> retained_lines;
    int readded = 0;
    std::vector<CoverageGap> gaps;

    size_t selected_count() const { return selected.size(); }
    nlohmann::json to_json() const;
    static CoverageReport from_json(const nlohmann::json& j);
};

/// Uncovered share of the AOI on a grid of `cell_size` cells (cell centers
/// inside the AOI count), plus the connected uncovered regions.
struct UncoveredArea {
    double fraction = 0;
    std::vector<CoverageGap> gaps;
};
UncoveredArea uncovered_area(const std::vector<const Footprint*>& selected, const Ring& aoi, double cell_size);

/// Default AOI: the rectangle (in flight-aligned axes) bounding all
/// footprints, shrunk on every side by half the median footprint extent
/// along that axis, which puts its edges near the outermost camera centers.
Ring default_aoi(const std::vector<Footprint>& footprints, const FlightAxes& axes = {});

/// Footprints must already carry line ids (cluster_flight_lines). Throws
/// InvalidArgument for an empty list, thresholds outside [0, 1) or an AOI
/// that touches no footprint.
CoverageReport select_minimum_cover(const std::vector<Footprint>& footprints, const Ring& aoi,
                                    const CoverOptions& opts = {}, const FlightAxes& axes = {});

/// AOI polygon from a CSV with x,y (or easting,northing) columns.
Ring read_aoi_csv(const std::string& path);

}  // namespace orthotrace
