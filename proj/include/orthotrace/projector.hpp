#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "orthotrace/bbox.hpp"
#include "orthotrace/formats/coco.hpp"
#include "orthotrace/formats/geo_offset.hpp"
#include "orthotrace/formats/reconstruction.hpp"
#include "orthotrace/geodesy.hpp"
#include "orthotrace/raster.hpp"

namespace orthotrace {

using formats::CameraIntrinsics;
using formats::ShotPose;

struct Ray {
    Eigen::Vector3d origin;
    Eigen::Vector3d dir;  // unit length
};

enum class ProjectionStatus { Ok, OutOfDsm, NoIntersection, BehindCamera };

std::string to_string(ProjectionStatus s);
ProjectionStatus parse_projection_status(const std::string& s);

/// Axis-aligned world rectangle in meters.
struct WorldBox {
    double min_x = 0, min_y = 0, max_x = 0, max_y = 0;

    double width() const { return max_x - min_x; }
    double height() const { return max_y - min_y; }
    double area() const { return width() * height(); }
    friend bool operator==(const WorldBox&, const WorldBox&) = default;
};

double world_iou(const WorldBox& a, const WorldBox& b);

/// Planar offset of the reconstruction frame (the geo offset file), added to
/// camera centers and removed from world points.
using FrameOffset = Eigen::Vector2d;

inline FrameOffset frame_offset(const formats::GeoOffset& g)
{
    return {g.offset_x, g.offset_y};
}

/// Rotation matrix of an axis-angle vector (world to camera).
Eigen::Matrix3d rotation_matrix(const Eigen::Vector3d& axis_angle);

/// C = -R^T t, shifted by the frame offset.
Eigen::Vector3d camera_center(const ShotPose& shot, const FrameOffset& offset = FrameOffset::Zero());

/// Ray through a pixel (pixel-center convention; (0, 0) is the center of the
/// top-left pixel). Camera frame: +x right, +y down, +z forward.
Ray pixel_to_ray(const CameraIntrinsics& cam, const ShotPose& shot, const PixelXY& px,
                 const FrameOffset& offset = FrameOffset::Zero());

/// Pixel of a world point, or nullopt when the point is not in front of the
/// camera.
std::optional<PixelXY> project_world_to_pixel(const CameraIntrinsics& cam, const ShotPose& shot,
                                              const Eigen::Vector3d& world,
                                              const FrameOffset& offset = FrameOffset::Zero());

struct IntersectOptions {
    std::optional<double> step;  // meters along the ray; defaults to the DSM cell size
    double max_range = 1e5;      // meters along the ray
    double tol = 1e-3;           // bracket length at which bisection stops
    int refine_depth = 4;        // step halvings tried when a segment grazes the surface
    Interpolation interpolation = Interpolation::Bilinear;
};

struct Intersection {
    ProjectionStatus status = ProjectionStatus::NoIntersection;
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
    double t = 0;  // distance along the ray

    bool ok() const { return status == ProjectionStatus::Ok; }
};

/// A DSM together with its full-grid window (precomputed elevation range).
class DsmSurface {
public:
    explicit DsmSurface(const RasterGrid& grid);
    const RasterGrid& grid() const { return *grid_; }
    const RasterWindow& full() const { return full_; }

private:
    const RasterGrid* grid_;
    RasterWindow full_;
};

/// Nearest crossing of the ray with the DSM surface: marches in fixed steps
/// measured from the ray origin (starting just above the highest cell),
/// subdivides segments that pass close to the surface, then bisects the
/// bracketing segment. Nodata cells are treated as holes. Returns
/// out_of_dsm when the ray leaves the raster before hitting, behind_camera
/// for rays that do not point downward.
Intersection intersect_ray_dsm(const Ray& ray, const RasterWindow& dsm, const IntersectOptions& opts = {});
Intersection intersect_ray_dsm(const Ray& ray, const RasterGrid& dsm, const IntersectOptions& opts = {});

struct ProjectOptions {
    double roi_margin = 0.25;
    bool use_roi = true;
    /// Points sampled per box edge including both corners; 3 gives the
    /// corners plus edge midpoints. Larger values densify the hull.
    int edge_samples = 3;
    /// Fraction of sampled points that must land for an ok result (6 of 8).
    double min_landed_fraction = 0.75;
    IntersectOptions intersect;
};

struct ProjectionResult {
    std::string source_image;
    int64_t det_id = 0;
    double score = 0;
    int64_t category_id = 0;
    BBox source_bbox;
    std::optional<WorldBox> world_bbox;
    std::optional<BBox> ortho_bbox;
    ProjectionStatus status = ProjectionStatus::NoIntersection;
    int landed = 0;
    int sampled = 0;

    bool ok() const { return status == ProjectionStatus::Ok; }
};

/// Casts the box outline onto the DSM and maps the hull of the hits into
/// orthomosaic pixels (rounded outward).
ProjectionResult project_bbox(const CameraIntrinsics& cam, const ShotPose& shot, const BBox& bbox,
                              const DsmSurface& dsm, const AffineGeotransform& ortho_gt,
                              const FrameOffset& offset = FrameOffset::Zero(), const ProjectOptions& opts = {});

/// World box to orthomosaic pixel box (COCO edge convention, rounded outward).
BBox world_to_ortho_bbox(const WorldBox& w, const AffineGeotransform& ortho_gt);

struct BatchOptions {
    ProjectOptions project;
    double world_nms_iou = 0.5;
    bool world_nms = true;
};

struct ProjectionSummary {
    int total = 0;
    int ok = 0;
    double rate = 0;
    int suppressed = 0;  // ok results removed by world-space NMS
    int unposed = 0;     // detections on images absent from the reconstruction

    nlohmann::json to_json() const;
};

struct BatchResult {
    std::vector<ProjectionResult> results;  // survivors and failures, ordered by (image, det_id)
    ProjectionSummary summary;
};

/// Projects every detection whose image has a pose. Runs in parallel per
/// detection; world-space duplicates across images are removed by greedy
/// score-ordered NMS.
BatchResult project_batch(const formats::DetectionSet& dets, const formats::Reconstruction& rec,
                          const FrameOffset& offset, const RasterGrid& dsm, const AffineGeotransform& ortho_gt,
                          const BatchOptions& opts = {});

/// Greedy NMS on world boxes; returns keep flags. Ties in score resolve by
/// input order.
std::vector<bool> world_nms(const std::vector<WorldBox>& boxes, const std::vector<double>& scores, double iou_thr);

extern const std::vector<std::string> kProjectionCsvHeader;
std::string projection_csv(const std::vector<ProjectionResult>& results);
void write_projection_csv(const std::vector<ProjectionResult>& results, const std::string& path);
std::vector<ProjectionResult> read_projection_csv(const std::string& path);

}  // namespace orthotrace
