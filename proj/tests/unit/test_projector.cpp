#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "orthotrace/error.hpp"
#include "orthotrace/io.hpp"
#include "orthotrace/projector.hpp"
#include "geometry.hpp"
#include "temp_dir.hpp"

using namespace orthotrace;
using orthotrace::testing::grid_from;
using orthotrace::testing::nadir_shot;
using orthotrace::testing::test_camera;
using orthotrace::testing::TempDir;

namespace {

RasterGrid flat(double z = 0, double half = 200, double cell = 1)
{
    return grid_from(-half, -half, half, half, cell, [z](double, double) { return z; });
}

Ray ray_towards(Eigen::Vector3d origin, Eigen::Vector3d dir)
{
    return {origin, dir.normalized()};
}

// Closed-form hit of a ray with the plane z = a*x + b*y + c.
Eigen::Vector3d plane_hit(const Ray& r, double a, double b, double c)
{
    const double t = (a * r.origin.x() + b * r.origin.y() + c - r.origin.z())
                     / (r.dir.z() - a * r.dir.x() - b * r.dir.y());
    return r.origin + t * r.dir;
}

double bumps(double x, double y)
{
    double z = 0;
    const double cx[] = {-30, 10, 45, 70}, cy[] = {0, -12, 8, 20}, hz[] = {12, 25, 18, 30};
    for (int i = 0; i < 4; ++i)
        z += hz[i] * std::exp(-((x - cx[i]) * (x - cx[i]) + (y - cy[i]) * (y - cy[i])) / (2 * 8.0 * 8.0));
    return z;
}

AffineGeotransform ortho_gt(double min_x = -200, double max_y = 200, double px = 0.1)
{
    return {min_x + px / 2, max_y - px / 2, px, -px, 0, 0};
}

}  // namespace

TEST(Projector, CameraCenterExamples)
{
    formats::ShotPose s;
    s.translation = {0, 0, -100};
    EXPECT_EQ(camera_center(s), Eigen::Vector3d(0, 0, 100));

    // 90 degree yaw: R = [[0,-1,0],[1,0,0],[0,0,1]], t = (1,2,3) -> C = -R^T t = (-2, 1, -3).
    s.rotation = {0, 0, M_PI / 2};
    s.translation = {1, 2, 3};
    const Eigen::Vector3d c = camera_center(s);
    EXPECT_NEAR(c.x(), -2, 1e-12);
    EXPECT_NEAR(c.y(), 1, 1e-12);
    EXPECT_NEAR(c.z(), -3, 1e-12);

    const Eigen::Vector3d shifted = camera_center(s, FrameOffset(561000, 4312000));
    EXPECT_NEAR(shifted.x(), 561000 - 2, 1e-9);
    EXPECT_NEAR(shifted.y(), 4312000 + 1, 1e-9);

    // World -> camera -> world with identity rotation.
    formats::ShotPose id;
    id.translation = {5, -7, 11};
    const Eigen::Vector3d x(3, 4, -20);
    const Eigen::Vector3d cam = rotation_matrix(id.rotation) * x + id.translation;
    EXPECT_EQ(rotation_matrix(id.rotation).transpose() * (cam - id.translation), x);
}

TEST(Projector, PixelToRayConventions)
{
    const auto cam = test_camera(101, 81, 0.8);
    const auto shot = nadir_shot("a", {0, 0, 100});
    const Ray center = pixel_to_ray(cam, shot, {50, 40});
    EXPECT_NEAR(center.dir.x(), 0, 1e-15);
    EXPECT_NEAR(center.dir.y(), 0, 1e-15);
    EXPECT_NEAR(center.dir.z(), -1, 1e-15);
    EXPECT_NEAR((center.origin - Eigen::Vector3d(0, 0, 100)).norm(), 0, 1e-12);

    const double f = cam.focal_px();
    const Ray right = pixel_to_ray(cam, shot, {50 + 0.1 * f, 40});
    const Eigen::Vector3d expect = Eigen::Vector3d(0.1, 0, -1).normalized();
    EXPECT_NEAR((right.dir - expect).norm(), 0, 1e-12);
    EXPECT_NEAR(right.dir.norm(), 1, 1e-12);

    const Ray a = pixel_to_ray(cam, shot, {20, 10});
    const Ray b = pixel_to_ray(cam, shot, {80, 70});
    EXPECT_NEAR(a.dir.x(), -b.dir.x(), 1e-15);
    EXPECT_NEAR(a.dir.y(), -b.dir.y(), 1e-15);
    EXPECT_NEAR(a.dir.z(), b.dir.z(), 1e-15);
    // Image down is south for a north-up shot.
    EXPECT_GT(a.dir.y(), 0);
}

TEST(Projector, AnalyticIntersections)
{
    const auto start = std::chrono::steady_clock::now();
    const RasterGrid g = flat();
    auto hit = intersect_ray_dsm(ray_towards({0, 0, 100}, {0, 0, -1}), g);
    ASSERT_TRUE(hit.ok());
    EXPECT_LT((hit.point - Eigen::Vector3d(0, 0, 0)).norm(), 1e-3);

    hit = intersect_ray_dsm(ray_towards({0, 0, 100}, {1, 0, -1}), g);
    ASSERT_TRUE(hit.ok());
    EXPECT_LT((hit.point - Eigen::Vector3d(100, 0, 0)).norm(), 1e-3);

    const RasterGrid inclined = grid_from(-200, -200, 200, 200, 1, [](double x, double) { return 0.1 * x; });
    for (const Eigen::Vector3d d : {Eigen::Vector3d(1, 0, -1), Eigen::Vector3d(-0.4, 0.3, -1),
                                    Eigen::Vector3d(0.05, -0.7, -1), Eigen::Vector3d(0, 0, -1)}) {
        const Ray r = ray_towards({3.3, -1.7, 120}, d);
        const auto h = intersect_ray_dsm(r, inclined);
        ASSERT_TRUE(h.ok());
        EXPECT_LT((h.point - plane_hit(r, 0.1, 0, 0)).norm(), 1e-3);
    }
    EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 5.0);
}

TEST(Projector, IntersectionFailureStatuses)
{
    const RasterGrid g = flat(0, 50);
    EXPECT_EQ(intersect_ray_dsm(ray_towards({0, 0, 100}, {0, 0, 1}), g).status, ProjectionStatus::BehindCamera);
    EXPECT_EQ(intersect_ray_dsm(ray_towards({0, 0, 100}, {1, 0, 0}), g).status, ProjectionStatus::BehindCamera);
    // Leaves the grid before descending to the ground.
    EXPECT_EQ(intersect_ray_dsm(ray_towards({0, 0, 100}, {1, 0, -0.5}), g).status, ProjectionStatus::OutOfDsm);
    // Never enters the grid.
    EXPECT_EQ(intersect_ray_dsm(ray_towards({500, 0, 100}, {1, 0, -1}), g).status, ProjectionStatus::OutOfDsm);
    IntersectOptions short_range;
    short_range.max_range = 50;
    EXPECT_EQ(intersect_ray_dsm(ray_towards({0, 0, 100}, {0, 0, -1}), g, short_range).status,
              ProjectionStatus::NoIntersection);
    EXPECT_EQ(to_string(ProjectionStatus::OutOfDsm), "out_of_dsm");
    EXPECT_EQ(parse_projection_status("behind_camera"), ProjectionStatus::BehindCamera);
    EXPECT_THROW(parse_projection_status("lost"), ParseError);
}

TEST(Projector, NodataHolesAreSkipped)
{
    RasterGrid g = flat(0, 50);
    g.nodata = -9999;
    const PixelXY hole = world_to_pixel(g.gt, 0, 0);
    g.at(static_cast<int>(hole.col), static_cast<int>(hole.row)) = -9999;
    EXPECT_FALSE(intersect_ray_dsm(ray_towards({0.2, 0.2, 100}, {0, 0, -1}), g).ok());
    const auto h = intersect_ray_dsm(ray_towards({-20, 0.2, 100}, {0.1, 0, -1}), g);
    ASSERT_TRUE(h.ok());
    EXPECT_NEAR(h.point.z(), 0, 1e-3);
}

TEST(Projector, FindsNearestCrossingOnBumps)
{
    const RasterGrid g = grid_from(-100, -100, 100, 100, 1, bumps);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 25; ++i) {
        const Ray r = ray_towards({-90, u(rng) * 20, 45 + 10 * u(rng)}, {1, 0.1 * u(rng), -0.45 - 0.1 * u(rng)});
        const auto h = intersect_ray_dsm(r, g);
        // Dense oracle: first sample at 1 mm spacing where the ray is at or
        // below the surface.
        double oracle = -1;
        for (double t = 0; t < 400; t += 1e-3) {
            const Eigen::Vector3d p = r.origin + t * r.dir;
            const Sample s = sample(g, p.x(), p.y());
            if (s.status == SampleStatus::OutOfBounds)
                break;
            if (p.z() <= s.value) {
                oracle = t;
                break;
            }
        }
        ASSERT_GT(oracle, 0) << "ray " << i;
        ASSERT_TRUE(h.ok()) << "ray " << i;
        EXPECT_NEAR(h.t, oracle, 2e-3) << "ray " << i;
    }
}

TEST(Projector, SmallerStepsAgreeWithinTolerance)
{
    const RasterGrid g = grid_from(-100, -100, 100, 100, 1, bumps);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 30; ++i) {
        const Ray r = ray_towards({60 * u(rng), 60 * u(rng), 80}, {0.4 * u(rng), 0.4 * u(rng), -1});
        IntersectOptions o;
        const auto base = intersect_ray_dsm(r, g, o);
        ASSERT_TRUE(base.ok());
        for (double step : {0.5, 0.25, 0.1}) {
            o.step = step;
            const auto h = intersect_ray_dsm(r, g, o);
            ASSERT_TRUE(h.ok());
            EXPECT_LE(std::abs(h.t - base.t), o.tol);
        }
    }
}

TEST(Projector, PixelWorldRoundTrip)
{
    const auto cam = test_camera(1200, 800, 0.75);
    const RasterGrid grid = flat(12.5, 300, 0.5);
    const RasterWindow g(grid);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (double yaw : {0.0, 0.7, -2.1}) {
        const auto shot = nadir_shot("s", {10, -20, 110}, yaw);
        for (int i = 0; i < 200; ++i) {
            const PixelXY px{u(rng) * 1199, u(rng) * 799};
            const Ray r = pixel_to_ray(cam, shot, px);
            const auto h = intersect_ray_dsm(r, g);
            ASSERT_TRUE(h.ok());
            EXPECT_NEAR(h.point.z(), 12.5, 1e-3);
            const auto back = project_world_to_pixel(cam, shot, h.point);
            ASSERT_TRUE(back);
            EXPECT_NEAR(back->col, px.col, 1e-6);
            EXPECT_NEAR(back->row, px.row, 1e-6);
        }
    }
    const auto shot = nadir_shot("s", {10, -20, 110});
    EXPECT_FALSE(project_world_to_pixel(cam, shot, {10, -20, 200}));
    const auto c = project_world_to_pixel(cam, shot, {10, -20, 0});
    ASSERT_TRUE(c);
    EXPECT_NEAR(c->col, 599.5, 1e-9);
    EXPECT_NEAR(c->row, 399.5, 1e-9);
}

TEST(Projector, RoundTripOnReliefWithinTolerance)
{
    const auto cam = test_camera(1000, 750, 0.8);
    const RasterGrid g = grid_from(-100, -100, 100, 100, 0.5, bumps);
    const auto shot = nadir_shot("s", {5, 5, 120}, 0.3);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-40, 40);
    int checked = 0;
    for (int i = 0; i < 200; ++i) {
        const double x = u(rng), y = u(rng);
        const Eigen::Vector3d ground(x, y, sample(g, x, y).value);
        const auto px = project_world_to_pixel(cam, shot, ground);
        ASSERT_TRUE(px);
        const auto h = intersect_ray_dsm(pixel_to_ray(cam, shot, *px), g);
        ASSERT_TRUE(h.ok());
        // Occluded points come back on the occluder, which is nearer.
        const Eigen::Vector3d c = camera_center(shot);
        if ((h.point - c).norm() < (ground - c).norm() - 1e-2)
            continue;
        EXPECT_LT((h.point - ground).norm(), 2e-3);
        ++checked;
    }
    EXPECT_GT(checked, 150);
}

TEST(Projector, BboxOnFlatGroundMatchesSimilarTriangles)
{
    const auto cam = test_camera(1000, 750, 0.8);
    const RasterGrid g = flat(0, 200, 1);
    const DsmSurface dsm(g);
    const auto shot = nadir_shot("s", {10, 20, 100});
    const double w = 120, h = 60;
    const BBox box{(1000 - w) / 2, (750 - h) / 2, w, h};
    const auto res = project_bbox(cam, shot, box, dsm, ortho_gt());
    ASSERT_EQ(res.status, ProjectionStatus::Ok);
    EXPECT_EQ(res.landed, 8);
    EXPECT_EQ(res.sampled, 8);
    const double gsd = 100 / cam.focal_px();
    const auto& wb = *res.world_bbox;
    EXPECT_NEAR(wb.width(), w * gsd, 1e-3);
    EXPECT_NEAR(wb.height(), h * gsd, 1e-3);
    EXPECT_NEAR(0.5 * (wb.min_x + wb.max_x), 10, 1e-3);
    EXPECT_NEAR(0.5 * (wb.min_y + wb.max_y), 20, 1e-3);
    // Ortho box covers the world box, rounded outward to whole pixels.
    const auto& ob = *res.ortho_bbox;
    EXPECT_EQ(ob.x, std::floor(ob.x));
    EXPECT_EQ(ob.w, std::floor(ob.w));
    EXPECT_LE(ob.x, (wb.min_x + 200) / 0.1 + 1e-6);
    EXPECT_GE(ob.x2(), (wb.max_x + 200) / 0.1 - 1e-6);
    EXPECT_LE(ob.y, (200 - wb.max_y) / 0.1 + 1e-6);
    EXPECT_GE(ob.y2(), (200 - wb.min_y) / 0.1 - 1e-6);
    EXPECT_LT(ob.w - (wb.width() / 0.1), 2.0);
}

TEST(Projector, WorldToOrthoBoxRoundsOutward)
{
    const auto gt = ortho_gt(0, 100, 0.5);
    EXPECT_EQ(world_to_ortho_bbox({1.0, 90.0, 2.0, 91.0}, gt), (BBox{2, 18, 2, 2}));
    EXPECT_EQ(world_to_ortho_bbox({1.1, 90.0, 2.0, 90.9}, gt), (BBox{2, 18, 2, 2}));
    EXPECT_EQ(world_to_ortho_bbox({0.9, 89.9, 2.0, 91.0}, gt), (BBox{1, 18, 3, 3}));
}

TEST(Projector, EdgeBoxesFailOutOfDsm)
{
    const auto cam = test_camera(1000, 750, 0.8);
    const RasterGrid g = grid_from(-50, -50, 50, 50, 1, [](double, double) { return 0.0; });
    const DsmSurface dsm(g);
    const auto shot = nadir_shot("s", {0, 0, 100});
    // Ground footprint of the image is 125 m wide; its left edge is outside the DSM.
    const auto edge = project_bbox(cam, shot, {0, 300, 60, 60}, dsm, ortho_gt(-50, 50));
    EXPECT_EQ(edge.status, ProjectionStatus::OutOfDsm);
    EXPECT_FALSE(edge.world_bbox);
    EXPECT_FALSE(edge.ortho_bbox);
    const auto inside = project_bbox(cam, shot, {470, 345, 60, 60}, dsm, ortho_gt(-50, 50));
    EXPECT_EQ(inside.status, ProjectionStatus::Ok);
    // Straddling box: 2 of 8 points inside is not enough, 6 of 8 is.
    const double left_px = 1000 / 2.0 - 50 / (100 / cam.focal_px()) - 0.5;
    const auto mostly_out = project_bbox(cam, shot, {left_px - 50, 345, 60, 60}, dsm, ortho_gt(-50, 50));
    EXPECT_EQ(mostly_out.landed, 3);
    EXPECT_EQ(mostly_out.status, ProjectionStatus::OutOfDsm);
    const auto mostly_in = project_bbox(cam, shot, {left_px - 10, 345, 60, 60}, dsm, ortho_gt(-50, 50));
    EXPECT_EQ(mostly_in.landed, 5);
    EXPECT_EQ(mostly_in.status, ProjectionStatus::OutOfDsm);
    ProjectOptions lenient;
    lenient.min_landed_fraction = 0.625;
    EXPECT_TRUE(project_bbox(cam, shot, {left_px - 10, 345, 60, 60}, dsm, ortho_gt(-50, 50), FrameOffset::Zero(),
                             lenient)
                    .ok());

    // Rotated camera: a single corner can leave the DSM on its own.
    const auto yawed = nadir_shot("s", {0, 0, 100}, M_PI / 4);
    bool saw_seven = false;
    // Image (-1, -1) points due west for this yaw.
    for (double d = 0; d <= 480; d += 2) {
        const auto r = project_bbox(cam, yawed, {470 - d * M_SQRT1_2, 345 - d * M_SQRT1_2, 60, 60}, dsm,
                                    ortho_gt(-50, 50));
        EXPECT_EQ(r.ok(), r.landed >= 6) << d;
        saw_seven |= r.landed == 7;
    }
    EXPECT_TRUE(saw_seven);
}

TEST(Projector, RoiMatchesFullDsmBitForBit)
{
    const RasterGrid g = grid_from(-100, -100, 100, 100, 0.5, bumps);
    const DsmSurface dsm(g);
    const auto cam = test_camera(1000, 750, 0.8);
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0, 1);
    ProjectOptions roi, full;
    full.use_roi = false;
    int ok = 0;
    for (int s = 0; s < 6; ++s) {
        // Mildly oblique poses.
        const double tilt = 0.25 * (u(rng) - 0.5);
        Eigen::Matrix3d r = Eigen::Vector3d(1, -1, -1).asDiagonal();
        r = Eigen::AngleAxisd(tilt, Eigen::Vector3d::UnitY()).toRotationMatrix() * r;
        const auto shot = orthotrace::testing::shot_from("s", r, {60 * (u(rng) - 0.5), 60 * (u(rng) - 0.5), 90});
        for (int i = 0; i < 40; ++i) {
            const BBox b{u(rng) * 900, u(rng) * 650, 10 + 90 * u(rng), 10 + 90 * u(rng)};
            const auto a = project_bbox(cam, shot, b, dsm, ortho_gt(-100, 100), FrameOffset::Zero(), roi);
            const auto c = project_bbox(cam, shot, b, dsm, ortho_gt(-100, 100), FrameOffset::Zero(), full);
            ASSERT_EQ(a.status, c.status);
            ASSERT_EQ(a.landed, c.landed);
            if (a.ok()) {
                ++ok;
                EXPECT_EQ(*a.world_bbox, *c.world_bbox);
                EXPECT_EQ(*a.ortho_bbox, *c.ortho_bbox);
            }
        }
    }
    EXPECT_GT(ok, 100);
}

TEST(Projector, BatchDeduplicatesAcrossImagesAndWritesCsv)
{
    const RasterGrid g = grid_from(561000 - 200, 4312000 - 200, 561000 + 200, 4312000 + 200, 1,
                                   [](double, double) { return 0.0; });
    const auto cam = test_camera(1000, 750, 0.8);
    formats::Reconstruction rec;
    rec.cameras[cam.key] = cam;
    rec.shots = {nadir_shot("a.jpg", {0, 0, 100}), nadir_shot("b.jpg", {10, 0, 100})};
    const FrameOffset offset(561000, 4312000);
    const double gsd = 100 / cam.focal_px();

    formats::DetectionSet dets;
    dets.images = {{1, "a.jpg", 1000, 750, {}}, {2, "b.jpg", 1000, 750, {}}, {3, "c.jpg", 1000, 750, {}}};
    dets.categories = {{1, "plant", {}}};
    // One plant at local (5, 0) seen from both shots, plus one unposed image.
    auto box_at = [&](double cx_world, double cam_x) {
        const double col = 499.5 + (cx_world - cam_x) / gsd;
        return BBox{col + 0.5 - 20, 375 - 20, 40, 40};
    };
    dets.annotations = {{1, 1, 1, box_at(5, 0), 1600, 0.9, std::nullopt, {}},
                        {2, 2, 1, box_at(5, 10), 1600, 0.8, std::nullopt, {}},
                        {3, 1, 1, box_at(-20, 0), 1600, 0.7, std::nullopt, {}},
                        {4, 3, 1, BBox{10, 10, 5, 5}, 25, 0.6, std::nullopt, {}}};

    const auto ortho = ortho_gt(561000 - 200, 4312000 + 200);
    const auto out = project_batch(dets, rec, offset, g, ortho);
    EXPECT_EQ(out.summary.total, 3);
    EXPECT_EQ(out.summary.ok, 3);
    EXPECT_DOUBLE_EQ(out.summary.rate, 1.0);
    EXPECT_EQ(out.summary.suppressed, 1);
    EXPECT_EQ(out.summary.unposed, 1);
    ASSERT_EQ(out.results.size(), 2u);
    EXPECT_EQ(out.results[0].source_image, "a.jpg");
    EXPECT_EQ(out.results[0].det_id, 1);
    EXPECT_EQ(out.results[1].det_id, 3);
    EXPECT_NEAR(0.5 * (out.results[0].world_bbox->min_x + out.results[0].world_bbox->max_x), 561005, 1e-3);

    TempDir dir;
    write_projection_csv(out.results, dir.file("p.csv"));
    const auto back = read_projection_csv(dir.file("p.csv"));
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].source_image, "a.jpg");
    EXPECT_EQ(*back[0].ortho_bbox, *out.results[0].ortho_bbox);
    EXPECT_NEAR(back[0].world_bbox->min_x, out.results[0].world_bbox->min_x, 1e-4);

    const auto empty = project_batch({}, rec, offset, g, ortho);
    EXPECT_EQ(empty.summary.total, 0);
    EXPECT_EQ(projection_csv(empty.results),
              "image,det_id,score,src_x,src_y,src_w,src_h,min_e,min_n,max_e,max_n,ortho_x,ortho_y,ortho_w,ortho_h,"
              "status\n");
}

TEST(Projector, FailedRowsHaveEmptyBoxFields)
{
    ProjectionResult r;
    r.source_image = "x.jpg";
    r.det_id = 4;
    r.score = 0.5;
    r.source_bbox = {1, 2, 3, 4};
    r.status = ProjectionStatus::OutOfDsm;
    EXPECT_EQ(projection_csv({r}).substr(projection_csv({}).size()), "x.jpg,4,0.5,1,2,3,4,,,,,,,,,out_of_dsm\n");
}

TEST(Projector, WorldNmsKeepsHighestScore)
{
    const std::vector<WorldBox> boxes{{0, 0, 1, 1}, {0.05, 0, 1.05, 1}, {3, 3, 4, 4}};
    EXPECT_EQ(world_nms(boxes, {0.5, 0.9, 0.1}, 0.5), (std::vector<bool>{false, true, true}));
    EXPECT_DOUBLE_EQ(world_iou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0);
}
