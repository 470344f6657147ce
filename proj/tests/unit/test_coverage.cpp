#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "orthotrace/coverage.hpp"
#include "orthotrace/error.hpp"
#include "geometry.hpp"
#include "oracles.hpp"

using namespace orthotrace;
using orthotrace::testing::grid_from;
using orthotrace::testing::nadir_shot;
using orthotrace::testing::test_camera;
using orthotrace::testing::brute_force_min_cover;

namespace {

Footprint rect_fp(const std::string& name, double x0, double y0, double x1, double y1)
{
    Footprint f;
    f.image_name = name;
    f.polygon = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
    f.center = {(x0 + x1) / 2, (y0 + y1) / 2};
    return f;
}

Ring rect(double x0, double y0, double x1, double y1)
{
    return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
}

formats::Reconstruction grid_mission(int per_line, int lines, double along_step, double across_step,
                                     formats::CameraIntrinsics cam)
{
    formats::Reconstruction rec;
    rec.cameras[cam.key] = cam;
    for (int l = 0; l < lines; ++l)
        for (int k = 0; k < per_line; ++k) {
            // Serpentine numbering.
            const int kk = l % 2 ? per_line - 1 - k : k;
            char name[32];
            std::snprintf(name, sizeof name, "IMG_%04d.JPG", l * per_line + k);
            rec.shots.push_back(nadir_shot(name, {kk * along_step, l * across_step, 100}));
        }
    std::sort(rec.shots.begin(), rec.shots.end(),
              [](const auto& a, const auto& b) { return a.image_name < b.image_name; });
    return rec;
}

}  // namespace

TEST(Coverage, NadirFootprintIsSquare)
{
    formats::Reconstruction rec;
    const auto cam = test_camera(1000, 1000, 1.0);
    rec.cameras[cam.key] = cam;
    rec.shots = {nadir_shot("a", {10, 20, 100}), nadir_shot("b", {10, 20, 100})};
    const auto fps = compute_footprints(rec, FrameOffset::Zero(), nullptr);
    ASSERT_EQ(fps.size(), 2u);
    const Bounds2 b = ring_bounds(fps[0].polygon);
    EXPECT_NEAR(b.max_x - b.min_x, 100, 1e-9);
    EXPECT_NEAR(b.max_y - b.min_y, 100, 1e-9);
    EXPECT_NEAR(0.5 * (b.min_x + b.max_x), 10, 1e-9);
    EXPECT_NEAR(0.5 * (b.min_y + b.max_y), 20, 1e-9);
    EXPECT_NEAR(fps[0].area(), 10000, 1e-6);
    EXPECT_FALSE(fps[0].partial);
    for (size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(fps[0].polygon[i].x, fps[1].polygon[i].x);
        EXPECT_EQ(fps[0].polygon[i].y, fps[1].polygon[i].y);
    }

    // Same footprint when cast onto a flat DSM.
    const RasterGrid flat = grid_from(-200, -200, 200, 200, 1, [](double, double) { return 0.0; });
    const auto on_dsm = compute_footprints(rec, FrameOffset::Zero(), &flat);
    for (size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(on_dsm[0].polygon[i].x, fps[0].polygon[i].x, 1e-3);
        EXPECT_NEAR(on_dsm[0].polygon[i].y, fps[0].polygon[i].y, 1e-3);
    }
}

TEST(Coverage, TiltedFootprintIsLargerQuadrilateral)
{
    formats::Reconstruction rec;
    const auto cam = test_camera(1000, 1000, 1.0);
    rec.cameras[cam.key] = cam;
    Eigen::Matrix3d r = Eigen::Vector3d(1, -1, -1).asDiagonal();
    r = Eigen::AngleAxisd(0.3, Eigen::Vector3d::UnitX()).toRotationMatrix() * r;
    rec.shots = {nadir_shot("n", {0, 0, 100}), orthotrace::testing::shot_from("t", r, {0, 0, 100})};
    const auto fps = compute_footprints(rec, FrameOffset::Zero(), nullptr);
    ASSERT_EQ(fps.size(), 2u);
    const auto& tilted = fps[1];
    EXPECT_GT(tilted.area(), fps[0].area());
    // Not a rectangle: opposite edges differ in length.
    const double top = std::hypot(tilted.polygon[1].x - tilted.polygon[0].x, tilted.polygon[1].y - tilted.polygon[0].y);
    const double bottom =
        std::hypot(tilted.polygon[2].x - tilted.polygon[3].x, tilted.polygon[2].y - tilted.polygon[3].y);
    EXPECT_GT(std::abs(top - bottom), 1.0);
    // Dense per-pixel casting along the top edge stays on the quadrilateral edge.
    for (int col = 0; col < 1000; col += 37) {
        const Ray ray = pixel_to_ray(cam, rec.shots[1], {col - 0.0, -0.5});
        const double t = -ray.origin.z() / ray.dir.z();
        const double x = ray.origin.x() + t * ray.dir.x(), y = ray.origin.y() + t * ray.dir.y();
        const auto& a = tilted.polygon[0];
        const auto& b = tilted.polygon[1];
        const double cross = (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x);
        EXPECT_NEAR(cross / top, 0, 1e-6);
    }
}

TEST(Coverage, PartialFootprintsShrinkOrDrop)
{
    formats::Reconstruction rec;
    const auto cam = test_camera(1000, 1000, 1.0);
    rec.cameras[cam.key] = cam;
    // DSM spans x in [-100, 49.9]: the east corners of "edge" miss it, all of "off" misses.
    const RasterGrid dsm = grid_from(-100, -100, 50, 100, 0.5, [](double, double) { return 0.0; });
    // Rotated 45 degrees, only the east corner of "lean" leaves the DSM.
    rec.shots = {nadir_shot("edge", {5, 0, 100}), nadir_shot("lean", {-10, 0, 100}, M_PI / 4),
                 nadir_shot("off", {400, 0, 100})};
    std::vector<std::string> failed;
    const auto fps = compute_footprints(rec, FrameOffset::Zero(), &dsm, {}, &failed);
    EXPECT_EQ(failed, (std::vector<std::string>{"edge", "off"}));
    ASSERT_EQ(fps.size(), 1u);
    EXPECT_EQ(fps[0].image_name, "lean");
    EXPECT_TRUE(fps[0].partial);
    EXPECT_EQ(fps[0].polygon.size(), 3u);
}

TEST(Coverage, ClustersFlightLines)
{
    std::vector<Footprint> fps;
    for (int i = 0; i < 6; ++i) {
        fps.push_back(rect_fp("a" + std::to_string(i), i * 4.0, -5, i * 4.0 + 20, 15));
        fps.push_back(rect_fp("b" + std::to_string(i), i * 4.0 + 1, 5, i * 4.0 + 21, 25));
    }
    auto copy = fps;
    cluster_flight_lines(fps, 5);
    for (const auto& f : fps)
        EXPECT_EQ(f.line_id, f.image_name[0] == 'a' ? 0 : 1) << f.image_name;

    std::mt19937 rng(4);
    std::shuffle(copy.begin(), copy.end(), rng);
    cluster_flight_lines(copy, 5);
    for (const auto& f : copy)
        EXPECT_EQ(f.line_id, f.image_name[0] == 'a' ? 0 : 1);

    std::vector<Footprint> single(fps.begin(), fps.begin() + 1);
    for (int i = 0; i < 5; ++i)
        single.push_back(rect_fp("s" + std::to_string(i), i * 3.0, 0, i * 3.0 + 10, 10));
    cluster_flight_lines(single, 5);
    for (const auto& f : single)
        EXPECT_EQ(f.line_id, 0);

    // Flight direction follows the long axis of the pattern.
    const auto axes = flight_axes(fps);
    EXPECT_GT(std::abs(axes.along.x()), std::abs(axes.along.y()));
}

TEST(Coverage, ClassicIntervalSkip)
{
    std::vector<Interval> items;
    for (int i = 0; i < 5; ++i)
        items.push_back({0.4 * i, 0.4 * i + 1});
    const auto cover = greedy_interval_cover(items, 0, 2.6, 0.1);
    EXPECT_TRUE(cover.complete);
    EXPECT_EQ(cover.chosen, (std::vector<size_t>{0, 2, 4}));
    EXPECT_EQ(brute_force_min_cover(items, 0, 2.6, 0.1), 3u);
}

TEST(Coverage, GreedyMatchesExhaustiveOnSingleLines)
{
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> pos(0, 5), len(1, 4);
    int feasible = 0;
    for (int trial = 0; trial < 1500; ++trial) {
        const size_t n = 1 + trial % 12;
        const double h = std::array<double, 3>{0.0, 0.1, 0.3}[trial % 3];
        std::vector<Interval> items;
        for (size_t i = 0; i < n; ++i) {
            const double lo = pos(rng);
            items.push_back({lo, lo + len(rng)});
        }
        const double lo = 0.5, hi = 7;
        const auto oracle = brute_force_min_cover(items, lo, hi, h);
        const auto greedy = greedy_interval_cover(items, lo, hi, h);
        if (oracle) {
            ++feasible;
            ASSERT_TRUE(greedy.complete) << trial;
            ASSERT_EQ(greedy.chosen.size(), *oracle) << trial;
        } else {
            ASSERT_FALSE(greedy.complete) << trial;
        }
    }
    EXPECT_GT(feasible, 200);
}

TEST(Coverage, SelectionOnSingleLineEqualsExhaustiveMinimum)
{
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> pos(0, 30), len(5, 12);
    int compared = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const size_t n = 2 + trial % 11;
        std::vector<Footprint> fps;
        std::vector<Interval> items;
        double lo = 1e9, hi = -1e9;
        for (size_t i = 0; i < n; ++i) {
            const double a = pos(rng), b = a + len(rng);
            fps.push_back(rect_fp("f" + std::to_string(100 + i), a, 0, b, 10));
            items.push_back({a, b});
            lo = std::min(lo, a);
            hi = std::max(hi, b);
        }
        const FlightAxes axes;
        cluster_flight_lines(fps, 5, axes);
        CoverOptions o;
        o.min_h_overlap = 0.1;
        o.cell_size = 0.25;
        const auto oracle = brute_force_min_cover(items, lo, hi, o.min_h_overlap);
        if (!oracle)
            continue;
        const auto rep = select_minimum_cover(fps, rect(lo, 2, hi, 8), o, axes);
        ++compared;
        ASSERT_EQ(rep.selected_count(), *oracle) << trial;
        EXPECT_EQ(rep.uncovered_fraction, 0.0);
        EXPECT_EQ(rep.readded, 0);
    }
    EXPECT_GT(compared, 50);
}

TEST(Coverage, SingleFootprintContainingAoi)
{
    std::vector<Footprint> fps{rect_fp("big", 0, 0, 100, 100), rect_fp("small", 10, 10, 30, 30)};
    cluster_flight_lines(fps, 1000);
    const auto rep = select_minimum_cover(fps, rect(20, 20, 80, 80));
    EXPECT_EQ(rep.selected, (std::vector<std::string>{"big"}));
    EXPECT_EQ(rep.uncovered_fraction, 0.0);
    EXPECT_FALSE(rep.best_effort);
}

TEST(Coverage, MissionGridMatchesExhaustiveMinimum)
{
    // 6 shots x 4 lines, 85% front and side overlap.
    const auto cam = test_camera(1000, 750, 1.0);  // footprint 100 m x 75 m at 100 m
    const double along_step = 0.15 * 100, across_step = 0.15 * 75;
    const auto rec = grid_mission(6, 4, along_step, across_step, cam);
    auto fps = compute_footprints(rec, FrameOffset::Zero(), nullptr);
    ASSERT_EQ(fps.size(), 24u);
    const auto axes = cluster_flight_lines(fps);
    std::set<int> ids;
    for (const auto& f : fps)
        ids.insert(f.line_id);
    ASSERT_EQ(ids.size(), 4u);
    const Ring aoi = default_aoi(fps, axes);
    CoverOptions o;
    const auto rep = select_minimum_cover(fps, aoi, o, axes);

    // Exhaustive minimum under the same rules: line chain across track,
    // then one along-track chain per retained line.
    std::vector<Interval> strips, along;
    for (int l = 0; l < 4; ++l)
        strips.push_back({l * across_step - 37.5, l * across_step + 37.5});
    for (int k = 0; k < 6; ++k)
        along.push_back({k * along_step - 50, k * along_step + 50});
    const Bounds2 ab = ring_bounds(aoi);
    const auto min_lines = brute_force_min_cover(strips, std::max(ab.min_y, -37.5), std::min(ab.max_y, 3 * across_step + 37.5),
                                                 o.min_v_overlap);
    const auto min_along = brute_force_min_cover(along, std::max(ab.min_x, -50.0), std::min(ab.max_x, 5 * along_step + 50),
                                                 o.min_h_overlap);
    ASSERT_TRUE(min_lines && min_along);
    EXPECT_EQ(rep.selected_count(), *min_lines * *min_along);
    EXPECT_EQ(rep.uncovered_fraction, 0.0);
    EXPECT_LT(rep.selected_count(), 24u);

    // Order invariance.
    auto shuffled = fps;
    std::mt19937 rng(1);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto axes2 = cluster_flight_lines(shuffled);
    EXPECT_EQ(select_minimum_cover(shuffled, default_aoi(shuffled, axes2), o, axes2).selected, rep.selected);
}

TEST(Coverage, ReportsOneCellHole)
{
    std::vector<Footprint> fps{rect_fp("s", 0, 0, 10, 4), rect_fp("n", 0, 5, 10, 10), rect_fp("w", 0, 4, 4, 5),
                               rect_fp("e", 5, 4, 10, 5)};
    std::vector<const Footprint*> sel;
    for (const auto& f : fps)
        sel.push_back(&f);
    const auto u = uncovered_area(sel, rect(0, 0, 10, 10), 1.0);
    EXPECT_DOUBLE_EQ(u.fraction, 0.01);
    ASSERT_EQ(u.gaps.size(), 1u);
    EXPECT_DOUBLE_EQ(u.gaps[0].area, 1.0);
    const Bounds2 b = ring_bounds(u.gaps[0].ring);
    EXPECT_EQ(b.min_x, 4);
    EXPECT_EQ(b.max_y, 5);

    std::vector<const Footprint*> all{&fps[0], &fps[1]};
    Footprint plug = rect_fp("p", 3, 3, 6, 6);
    all.push_back(&plug);
    all.push_back(&fps[2]);
    all.push_back(&fps[3]);
    EXPECT_EQ(uncovered_area(all, rect(0, 0, 10, 10), 0.5).fraction, 0.0);
}

TEST(Coverage, BestEffortAndReportRoundTrip)
{
    std::vector<Footprint> fps{rect_fp("a", 0, 0, 10, 10), rect_fp("b", 8, 0, 18, 10)};
    cluster_flight_lines(fps, 5);
    CoverOptions o;
    o.cell_size = 0.5;
    const auto rep = select_minimum_cover(fps, rect(0, 0, 30, 10), o);
    EXPECT_TRUE(rep.best_effort);
    EXPECT_NEAR(rep.uncovered_fraction, 12.0 / 30.0, 1e-12);
    ASSERT_EQ(rep.gaps.size(), 1u);
    EXPECT_NEAR(rep.gaps[0].area, 120, 1e-9);

    const auto back = CoverageReport::from_json(nlohmann::json::parse(rep.to_json().dump()));
    EXPECT_EQ(back.to_json(), rep.to_json());
}

TEST(Coverage, ReaddsSkippedImagesForHoles)
{
    // Line chain skips "mid", whose neighbours leave a hole in the middle row.
    std::vector<Footprint> fps{rect_fp("a", 0, 0, 10, 10), rect_fp("mid", 5, 0, 15, 10),
                               rect_fp("b", 9.5, 0, 20, 10)};
    // Punch the hole: "b" misses a notch of the AOI that only "mid" sees.
    fps[2].polygon = {{9.5, 0}, {20, 0}, {20, 10}, {9.5, 10}, {9.5, 6}, {12, 6}, {12, 4}, {9.5, 4}};
    cluster_flight_lines(fps, 5);
    CoverOptions o;
    o.min_h_overlap = 0;
    o.cell_size = 0.25;
    o.max_uncovered = 0;
    const auto rep = select_minimum_cover(fps, rect(0, 0, 20, 10), o);
    EXPECT_EQ(rep.readded, 1);
    EXPECT_EQ(rep.selected, (std::vector<std::string>{"a", "mid", "b"}));
    EXPECT_EQ(rep.uncovered_fraction, 0.0);
}

TEST(Coverage, RejectsBadInput)
{
    EXPECT_THROW(select_minimum_cover({}, rect(0, 0, 1, 1)), InvalidArgument);
    std::vector<Footprint> fps{rect_fp("a", 0, 0, 10, 10)};
    EXPECT_THROW(select_minimum_cover(fps, rect(0, 0, 1, 1)), InvalidArgument);  // no line ids
    cluster_flight_lines(fps, 5);
    EXPECT_THROW(select_minimum_cover(fps, rect(50, 50, 60, 60)), InvalidArgument);
    CoverOptions o;
    o.min_h_overlap = 1.0;
    EXPECT_THROW(select_minimum_cover(fps, rect(0, 0, 5, 5), o), InvalidArgument);
}
