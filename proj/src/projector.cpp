#include "orthotrace/projector.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>

#include <Eigen/Geometry>
#include <spdlog/spdlog.h>

#include "orthotrace/error.hpp"
#include "orthotrace/formats/csv.hpp"
#include "orthotrace/io.hpp"
#include "orthotrace/number_format.hpp"
#include "orthotrace/parallel.hpp"

namespace orthotrace {

std::string to_string(ProjectionStatus s)
{
    switch (s) {
    case ProjectionStatus::Ok: return "ok";
    case ProjectionStatus::OutOfDsm: return "out_of_dsm";
    case ProjectionStatus::NoIntersection: return "no_intersection";
    case ProjectionStatus::BehindCamera: return "behind_camera";
    }
    return "no_intersection";
}

ProjectionStatus parse_projection_status(const std::string& s)
{
    for (auto st : {ProjectionStatus::Ok, ProjectionStatus::OutOfDsm, ProjectionStatus::NoIntersection,
                    ProjectionStatus::BehindCamera})
        if (to_string(st) == s)
            return st;
    throw ParseError("unknown projection status '" + s + "'");
}

double world_iou(const WorldBox& a, const WorldBox& b)
{
    const double w = std::min(a.max_x, b.max_x) - std::max(a.min_x, b.min_x);
    const double h = std::min(a.max_y, b.max_y) - std::max(a.min_y, b.min_y);
    if (w <= 0 || h <= 0)
        return 0;
    const double inter = w * h;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0;
}

Eigen::Matrix3d rotation_matrix(const Eigen::Vector3d& axis_angle)
{
    const double angle = axis_angle.norm();
    if (angle == 0)
        return Eigen::Matrix3d::Identity();
    return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

Eigen::Vector3d camera_center(const ShotPose& shot, const FrameOffset& offset)
{
    const Eigen::Matrix3d r = rotation_matrix(shot.rotation);
    Eigen::Vector3d c = -r.transpose() * shot.translation;
    c.x() += offset.x();
    c.y() += offset.y();
    return c;
}

Ray pixel_to_ray(const CameraIntrinsics& cam, const ShotPose& shot, const PixelXY& px, const FrameOffset& offset)
{
    const double f = cam.focal_px();
    if (!(f > 0))
        throw InvalidArgument("camera '" + cam.key + "': focal length must be positive");
    const Eigen::Vector3d d((px.col - (cam.width - 1) / 2.0) / f, (px.row - (cam.height - 1) / 2.0) / f, 1.0);
    Eigen::Vector3d dir = rotation_matrix(shot.rotation).transpose() * d;
    const double n = dir.norm();
    if (!(n > 0))
        throw InvalidArgument("zero-length ray direction");
    return {camera_center(shot, offset), dir / n};
}

std::optional<PixelXY> project_world_to_pixel(const CameraIntrinsics& cam, const ShotPose& shot,
                                              const Eigen::Vector3d& world, const FrameOffset& offset)
{
    const Eigen::Vector3d local(world.x() - offset.x(), world.y() - offset.y(), world.z());
    const Eigen::Vector3d p = rotation_matrix(shot.rotation) * local + shot.translation;
    if (!(p.z() > 0))
        return std::nullopt;
    const double f = cam.focal_px();
    return PixelXY{p.x() / p.z() * f + (cam.width - 1) / 2.0, p.y() / p.z() * f + (cam.height - 1) / 2.0};
}

DsmSurface::DsmSurface(const RasterGrid& grid) : grid_(&grid), full_(grid) {}

namespace {

struct Marcher {
    const Ray& ray;
    const RasterWindow& dsm;
    const IntersectOptions& opts;

    Eigen::Vector3d at(double t) const { return ray.origin + t * ray.dir; }

    // Height of the ray above the surface, or nullopt on nodata/outside.
    std::optional<double> gap(double t) const
    {
        const Eigen::Vector3d p = at(t);
        const Sample s = dsm.sample(p.x(), p.y(), opts.interpolation);
        if (!s.ok())
            return std::nullopt;
        return p.z() - s.value;
    }

    // Looks for a sign change inside a segment whose ends are both above the
    // surface but close to it. Nearer half first so the first crossing wins.
    std::optional<std::pair<double, double>> refine(double t0, double h0, double t1, double h1, int depth,
                                                    double step) const
    {
        if (depth <= 0 || h0 >= step || h1 >= step)
            return std::nullopt;
        const double tm = 0.5 * (t0 + t1);
        const auto hm = gap(tm);
        if (!hm)
            return std::nullopt;
        if (*hm <= 0)
            return std::pair{t0, tm};
        if (auto b = refine(t0, h0, tm, *hm, depth - 1, step))
            return b;
        return refine(tm, *hm, t1, h1, depth - 1, step);
    }

    Intersection bisect(double t0, double t1) const
    {
        while (t1 - t0 > opts.tol / 2) {
            const double tm = 0.5 * (t0 + t1);
            const auto hm = gap(tm);
            if (!hm || *hm <= 0)
                t1 = tm;
            else
                t0 = tm;
        }
        const double t = 0.5 * (t0 + t1);
        return {ProjectionStatus::Ok, at(t), t};
    }
};

}  // namespace

Intersection intersect_ray_dsm(const Ray& ray, const RasterWindow& dsm, const IntersectOptions& opts)
{
    if (!(ray.dir.z() < 0))
        return {ProjectionStatus::BehindCamera, {}, 0};
    const auto range = dsm.value_range();
    if (!range || dsm.empty())
        return {ProjectionStatus::OutOfDsm, {}, 0};
    const double step = opts.step.value_or(dsm.grid().cell_size());
    if (!(step > 0) || !(opts.tol > 0))
        throw InvalidArgument("intersect_ray_dsm: step and tol must be positive");

    const Marcher m{ray, dsm, opts};
    const double t_start = std::max(0.0, (ray.origin.z() - range->second) / -ray.dir.z());
    const long long k0 = std::max(0LL, static_cast<long long>(std::floor(t_start / step)) - 1);

    bool entered = false;
    std::optional<std::pair<double, double>> prev;  // (t, gap) of the last valid sample
    for (long long k = k0;; ++k) {
        const double t = static_cast<double>(k) * step;
        if (t > opts.max_range)
            return {ProjectionStatus::NoIntersection, {}, 0};
        const Eigen::Vector3d p = m.at(t);
        const Sample s = dsm.sample(p.x(), p.y(), opts.interpolation);
        if (s.status == SampleStatus::OutOfBounds) {
            if (entered || p.z() < range->first)
                return {ProjectionStatus::OutOfDsm, {}, 0};
            continue;
        }
        entered = true;
        if (s.status == SampleStatus::Nodata) {
            prev.reset();
            continue;
        }
        const double h = p.z() - s.value;
        if (h <= 0) {
            if (!prev)
                return {ProjectionStatus::NoIntersection, {}, 0};
            return m.bisect(prev->first, t);
        }
        if (prev) {
            if (auto b = m.refine(prev->first, prev->second, t, h, opts.refine_depth, step))
                return m.bisect(b->first, b->second);
        }
        prev = std::pair{t, h};
    }
}

Intersection intersect_ray_dsm(const Ray& ray, const RasterGrid& dsm, const IntersectOptions& opts)
{
    return intersect_ray_dsm(ray, RasterWindow(dsm), opts);
}

BBox world_to_ortho_bbox(const WorldBox& w, const AffineGeotransform& gt)
{
    double c0 = std::numeric_limits<double>::infinity(), r0 = c0;
    double c1 = -c0, r1 = -c0;
    for (double x : {w.min_x, w.max_x})
        for (double y : {w.min_y, w.max_y}) {
            const PixelXY p = world_to_pixel(gt, x, y);
            c0 = std::min(c0, p.col + 0.5);
            c1 = std::max(c1, p.col + 0.5);
            r0 = std::min(r0, p.row + 0.5);
            r1 = std::max(r1, p.row + 0.5);
        }
    const double x0 = std::floor(c0), y0 = std::floor(r0);
    return {x0, y0, std::ceil(c1) - x0, std::ceil(r1) - y0};
}

namespace {

std::vector<PixelXY> outline_samples(const BBox& b, int per_edge)
{
    const int n = std::max(2, per_edge);
    // Edge coordinates to pixel-center coordinates.
    const double x0 = b.x - 0.5, y0 = b.y - 0.5, x1 = b.x2() - 0.5, y1 = b.y2() - 0.5;
    const std::array<std::pair<double, double>, 4> corners{{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}};
    std::vector<PixelXY> out;
    for (int e = 0; e < 4; ++e) {
        const auto [ax, ay] = corners[e];
        const auto [bx, by] = corners[(e + 1) % 4];
        for (int i = 0; i < n - 1; ++i) {
            const double f = static_cast<double>(i) / (n - 1);
            out.push_back({ax + f * (bx - ax), ay + f * (by - ay)});
        }
    }
    return out;
}

int severity(ProjectionStatus s)
{
    switch (s) {
    case ProjectionStatus::BehindCamera: return 3;
    case ProjectionStatus::OutOfDsm: return 2;
    case ProjectionStatus::NoIntersection: return 1;
    case ProjectionStatus::Ok: return 0;
    }
    return 0;
}

}  // namespace

ProjectionResult project_bbox(const CameraIntrinsics& cam, const ShotPose& shot, const BBox& bbox,
                              const DsmSurface& dsm, const AffineGeotransform& ortho_gt, const FrameOffset& offset,
                              const ProjectOptions& opts)
{
    ProjectionResult res;
    res.source_image = shot.image_name;
    res.source_bbox = bbox;

    const auto pixels = outline_samples(bbox, opts.edge_samples);
    std::vector<Ray> rays;
    rays.reserve(pixels.size());
    for (const auto& px : pixels)
        rays.push_back(pixel_to_ray(cam, shot, px, offset));
    res.sampled = static_cast<int>(rays.size());

    const auto range = dsm.full().value_range();
    // Coarse ground footprint: where the rays cross the top and bottom of
    // the DSM elevation range.
    std::optional<RasterWindow> roi;
    std::vector<std::optional<Eigen::Vector2d>> top(rays.size());
    if (opts.use_roi && range) {
        double min_x = std::numeric_limits<double>::infinity(), min_y = min_x;
        double max_x = -min_x, max_y = -min_x;
        bool any = false;
        for (size_t i = 0; i < rays.size(); ++i) {
            const Ray& r = rays[i];
            if (!(r.dir.z() < 0))
                continue;
            for (double z : {range->second, range->first}) {
                const double t = std::max(0.0, (r.origin.z() - z) / -r.dir.z());
                const Eigen::Vector3d p = r.origin + t * r.dir;
                if (z == range->second)
                    top[i] = p.head<2>();
                min_x = std::min(min_x, p.x());
                max_x = std::max(max_x, p.x());
                min_y = std::min(min_y, p.y());
                max_y = std::max(max_y, p.y());
                any = true;
            }
        }
        if (any) {
            const double gx = 0.5 * (max_x - min_x) * opts.roi_margin;
            const double gy = 0.5 * (max_y - min_y) * opts.roi_margin;
            roi.emplace(RasterWindow::covering(dsm.grid(), min_x - gx, min_y - gy, max_x + gx, max_y + gy));
        }
    }

    double min_x = std::numeric_limits<double>::infinity(), min_y = min_x;
    double max_x = -min_x, max_y = -min_x;
    ProjectionStatus worst = ProjectionStatus::Ok;
    for (size_t i = 0; i < rays.size(); ++i) {
        std::optional<Intersection> hit;
        if (roi && !roi->empty() && top[i] && roi->contains(top[i]->x(), top[i]->y())) {
            // Only trusted when the whole descent from the top of the DSM
            // range to the hit stays inside the window; the window is convex
            // so checking both ends suffices.
            Intersection h = intersect_ray_dsm(rays[i], *roi, opts.intersect);
            if (h.ok() && roi->contains(h.point.x(), h.point.y()))
                hit = h;
        }
        if (!hit)
            hit = intersect_ray_dsm(rays[i], dsm.full(), opts.intersect);
        if (hit->ok()) {
            ++res.landed;
            min_x = std::min(min_x, hit->point.x());
            max_x = std::max(max_x, hit->point.x());
            min_y = std::min(min_y, hit->point.y());
            max_y = std::max(max_y, hit->point.y());
        } else if (severity(hit->status) > severity(worst)) {
            worst = hit->status;
        }
    }

    const double need = opts.min_landed_fraction * res.sampled;
    if (res.landed > 0 && res.landed + 1e-9 >= need) {
        res.status = ProjectionStatus::Ok;
        res.world_bbox = WorldBox{min_x, min_y, max_x, max_y};
        res.ortho_bbox = world_to_ortho_bbox(*res.world_bbox, ortho_gt);
    } else {
        res.status = worst == ProjectionStatus::Ok ? ProjectionStatus::NoIntersection : worst;
    }
    return res;
}

nlohmann::json ProjectionSummary::to_json() const
{
    return {{"total", total}, {"ok", ok}, {"rate", rate}, {"suppressed", suppressed}, {"unposed", unposed}};
}

std::vector<bool> world_nms(const std::vector<WorldBox>& boxes, const std::vector<double>& scores, double iou_thr)
{
    std::vector<size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    std::vector<bool> keep(boxes.size(), false);
    std::vector<size_t> kept;
    for (size_t i : order) {
        bool ok = true;
        for (size_t j : kept)
            if (world_iou(boxes[i], boxes[j]) >= iou_thr) {
                ok = false;
                break;
            }
        if (ok) {
            keep[i] = true;
            kept.push_back(i);
        }
    }
    return keep;
}

BatchResult project_batch(const formats::DetectionSet& dets, const formats::Reconstruction& rec,
                          const FrameOffset& offset, const RasterGrid& dsm, const AffineGeotransform& ortho_gt,
                          const BatchOptions& opts)
{
    struct Job {
        const formats::Annotation* ann;
        std::string image;
        const ShotPose* shot;
    };
    BatchResult out;
    std::vector<Job> jobs;
    std::map<std::string, int> unposed;
    for (const auto& a : dets.annotations) {
        const auto* img = dets.find_image(a.image_id);
        if (!img)
            throw InvalidArgument("detection " + std::to_string(a.id) + " references unknown image "
                                  + std::to_string(a.image_id));
        const ShotPose* shot = rec.find_shot(img->file_name);
        if (!shot) {
            ++unposed[img->file_name];
            continue;
        }
        jobs.push_back({&a, img->file_name, shot});
    }
    for (const auto& [name, n] : unposed)
        spdlog::warn("image '{}' has no pose in the reconstruction; {} detection(s) skipped", name, n);
    out.summary.unposed = std::accumulate(unposed.begin(), unposed.end(), 0,
                                          [](int s, const auto& kv) { return s + kv.second; });

    const DsmSurface surface(dsm);
    std::vector<ProjectionResult> results(jobs.size());
    parallel_for(jobs.size(), [&](size_t i) {
        const Job& j = jobs[i];
        ProjectionResult r = project_bbox(rec.camera_for(*j.shot), *j.shot, j.ann->bbox, surface, ortho_gt, offset,
                                          opts.project);
        r.source_image = j.image;
        r.det_id = j.ann->id;
        r.category_id = j.ann->category_id;
        r.score = j.ann->score.value_or(1.0);
        results[i] = std::move(r);
    });
    std::sort(results.begin(), results.end(), [](const ProjectionResult& a, const ProjectionResult& b) {
        return std::tie(a.source_image, a.det_id) < std::tie(b.source_image, b.det_id);
    });

    out.summary.total = static_cast<int>(results.size());
    for (const auto& r : results)
        out.summary.ok += r.ok() ? 1 : 0;
    out.summary.rate = out.summary.total ? static_cast<double>(out.summary.ok) / out.summary.total : 0.0;

    if (opts.world_nms) {
        std::vector<size_t> idx;
        std::vector<WorldBox> boxes;
        std::vector<double> scores;
        for (size_t i = 0; i < results.size(); ++i)
            if (results[i].ok()) {
                idx.push_back(i);
                boxes.push_back(*results[i].world_bbox);
                scores.push_back(results[i].score);
            }
        const auto keep = world_nms(boxes, scores, opts.world_nms_iou);
        std::vector<bool> drop(results.size(), false);
        for (size_t k = 0; k < idx.size(); ++k)
            if (!keep[k]) {
                drop[idx[k]] = true;
                ++out.summary.suppressed;
            }
        for (size_t i = 0; i < results.size(); ++i)
            if (!drop[i])
                out.results.push_back(std::move(results[i]));
    } else {
        out.results = std::move(results);
    }
    return out;
}

const std::vector<std::string> kProjectionCsvHeader = {
    "image", "det_id", "score", "src_x", "src_y", "src_w", "src_h", "min_e", "min_n",
    "max_e", "max_n", "ortho_x", "ortho_y", "ortho_w", "ortho_h", "status"};

namespace {

formats::CsvRow to_row(const ProjectionResult& r)
{
    formats::CsvRow row{r.source_image,
                        std::to_string(r.det_id),
                        format_shortest(r.score),
                        format_shortest(r.source_bbox.x),
                        format_shortest(r.source_bbox.y),
                        format_shortest(r.source_bbox.w),
                        format_shortest(r.source_bbox.h)};
    if (r.world_bbox) {
        for (double v : {r.world_bbox->min_x, r.world_bbox->min_y, r.world_bbox->max_x, r.world_bbox->max_y})
            row.push_back(format_fixed(v, 4));
    } else {
        row.insert(row.end(), 4, "");
    }
    if (r.ortho_bbox) {
        for (double v : {r.ortho_bbox->x, r.ortho_bbox->y, r.ortho_bbox->w, r.ortho_bbox->h})
            row.push_back(format_shortest(v));
    } else {
        row.insert(row.end(), 4, "");
    }
    row.push_back(to_string(r.status));
    return row;
}

}  // namespace

std::string projection_csv(const std::vector<ProjectionResult>& results)
{
    std::string out = formats::csv_line(kProjectionCsvHeader) + "\n";
    for (const auto& r : results)
        out += formats::csv_line(to_row(r)) + "\n";
    return out;
}

void write_projection_csv(const std::vector<ProjectionResult>& results, const std::string& path)
{
    write_text_file(path, projection_csv(results));
}

std::vector<ProjectionResult> read_projection_csv(const std::string& path)
{
    const auto table = formats::CsvTable::read(path);
    std::vector<ProjectionResult> out;
    for (size_t i = 0; i < table.size(); ++i) {
        ProjectionResult r;
        r.source_image = table.get(i, "image");
        r.det_id = parse_int(table.get(i, "det_id"));
        r.score = table.number(i, "score");
        r.source_bbox = {table.number(i, "src_x"), table.number(i, "src_y"), table.number(i, "src_w"),
                         table.number(i, "src_h")};
        r.status = parse_projection_status(table.get(i, "status"));
        if (r.ok()) {
            r.world_bbox = WorldBox{table.number(i, "min_e"), table.number(i, "min_n"), table.number(i, "max_e"),
                                    table.number(i, "max_n")};
            r.ortho_bbox = BBox{table.number(i, "ortho_x"), table.number(i, "ortho_y"), table.number(i, "ortho_w"),
                                table.number(i, "ortho_h")};
        } else if (!table.get(i, "min_e").empty()) {
            throw ParseError("projection CSV " + path + ": boxes present on a failed row",
                             static_cast<int>(table.line_of(i)));
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace orthotrace
