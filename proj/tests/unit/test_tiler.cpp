#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <map>
#include <numeric>
#include <set>

#include <opencv2/imgcodecs.hpp>

#include "orthotrace/error.hpp"
#include "orthotrace/tiler.hpp"
#include "temp_dir.hpp"

using namespace orthotrace;
using orthotrace::testing::TempDir;
namespace fs = std::filesystem;

namespace {

formats::Annotation ann(int64_t id, int64_t image, BBox b, std::optional<double> score = std::nullopt)
{
    formats::Annotation a;
    a.id = id;
    a.image_id = image;
    a.category_id = 1;
    a.bbox = b;
    a.area = b.area();
    a.score = score;
    return a;
}

std::vector<Tile> fake_tiles(size_t n, size_t per_source)
{
    std::vector<Tile> tiles(n);
    for (size_t i = 0; i < n; ++i) {
        tiles[i].image.id = static_cast<int64_t>(i) + 1;
        tiles[i].source_image_id = static_cast<int64_t>(i / per_source) + 1;
    }
    return tiles;
}

// Reference NMS: repeatedly take the best remaining box and drop everything
// overlapping it.
std::vector<bool> brute_nms(const std::vector<BBox>& boxes, const std::vector<double>& scores, double thr)
{
    std::vector<bool> alive(boxes.size(), true), keep(boxes.size(), false);
    while (true) {
        std::optional<size_t> best;
        for (size_t i = 0; i < boxes.size(); ++i) {
            if (!alive[i])
                continue;
            if (!best || scores[i] > scores[*best]
                || (scores[i] == scores[*best] && boxes[i].area() > boxes[*best].area()))
                best = i;
        }
        if (!best)
            break;
        keep[*best] = true;
        alive[*best] = false;
        for (size_t i = 0; i < boxes.size(); ++i)
            if (alive[i] && iou(boxes[i], boxes[*best]) >= thr)
                alive[i] = false;
    }
    return keep;
}

}  // namespace

TEST(Tiler, PaperImageGivesTwentyFourTiles)
{
    const auto tiles = tile_grid(5472, 3648);
    ASSERT_EQ(tiles.size(), 24u);
    std::set<int> xs, ys;
    for (const auto& t : tiles) {
        EXPECT_EQ(t.w, 1024);
        EXPECT_EQ(t.h, 1024);
        EXPECT_GE(t.x, 0);
        EXPECT_GE(t.y, 0);
        EXPECT_LE(t.x + t.w, 5472);
        EXPECT_LE(t.y + t.h, 3648);
        xs.insert(t.x);
        ys.insert(t.y);
    }
    EXPECT_EQ(xs, (std::set<int>{0, 924, 1848, 2772, 3696, 4448}));
    EXPECT_EQ(ys, (std::set<int>{0, 924, 1848, 2624}));
    EXPECT_EQ(tile_grid(1024, 1024), (std::vector<TileRect>{{0, 0, 1024, 1024}}));
    EXPECT_EQ(tile_grid(600, 2000).front(), (TileRect{0, 0, 600, 1024}));
}

TEST(Tiler, TilesCoverRandomImages)
{
    std::mt19937 rng(8);
    std::uniform_int_distribution<int> dim(40, 1500);
    TileSpec spec;
    spec.tile_w = 256;
    spec.tile_h = 192;
    spec.overlap = 30;
    for (int trial = 0; trial < 40; ++trial) {
        const int w = dim(rng), h = dim(rng);
        std::vector<char> hit(static_cast<size_t>(w) * h, 0);
        for (const auto& t : tile_grid(w, h, spec)) {
            ASSERT_TRUE(t.w == std::min(w, spec.tile_w) && t.h == std::min(h, spec.tile_h));
            ASSERT_TRUE(t.x >= 0 && t.y >= 0 && t.x + t.w <= w && t.y + t.h <= h);
            for (int y = t.y; y < t.y + t.h; ++y)
                std::fill_n(hit.begin() + static_cast<size_t>(y) * w + t.x, t.w, 1);
        }
        ASSERT_TRUE(std::all_of(hit.begin(), hit.end(), [](char c) { return c; })) << w << "x" << h;
    }
}

TEST(Tiler, RejectsBadSpecs)
{
    EXPECT_THROW(tile_grid(50, 50), InvalidArgument);  // smaller than the overlap
    TileSpec s;
    s.overlap = 1024;
    EXPECT_THROW(s.validate(), InvalidArgument);
    s = {};
    s.min_retention = 1.5;
    EXPECT_THROW(s.validate(), InvalidArgument);
}

TEST(Tiler, RetentionBoundary)
{
    const TileRect tile{0, 0, 1024, 1024};
    const TileSpec spec;
    const auto inside = ann(7, 3, {100, 200, 50, 40});
    const auto quarter = ann(8, 3, {999, 0, 100, 100});      // 25 px of 100 inside
    const auto exact = ann(9, 3, {994, 0, 100, 100});        // 30 px
    const auto almost = ann(10, 3, {994.1, 500, 100, 100});  // 29.9 px
    const auto thin = ann(11, 3, {1021, 300, 10, 10});       // 3 px wide when clipped
    int64_t next = 1;
    const auto out = clip_annotations({&inside, &quarter, &exact, &almost, &thin}, tile, spec, 55, next);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].bbox, inside.bbox);
    EXPECT_EQ(out[0].id, 1);
    EXPECT_EQ(out[0].image_id, 55);
    EXPECT_EQ(out[0].provenance, (formats::Provenance{3, 7, 0, 0}));
    EXPECT_EQ(out[1].bbox, (BBox{994, 0, 30, 100}));
    EXPECT_EQ(out[1].provenance->orig_ann_id, 9);
    EXPECT_EQ(next, 3);

    // Translation into tile coordinates.
    int64_t n2 = 100;
    const auto moved = clip_annotations({&inside}, {50, 150, 1024, 1024}, spec, 2, n2);
    ASSERT_EQ(moved.size(), 1u);
    EXPECT_EQ(moved[0].bbox, (BBox{50, 50, 50, 40}));
    EXPECT_EQ(moved[0].id, 100);
}

TEST(Tiler, RetainedBoxesSatisfyPredicates)
{
    std::mt19937 rng(12);
    std::uniform_real_distribution<double> pos(-50, 1100), size(1, 120);
    const TileRect tile{0, 0, 1024, 1024};
    TileSpec spec;
    std::vector<formats::Annotation> boxes;
    for (int i = 0; i < 2000; ++i)
        boxes.push_back(ann(i + 1, 1, {std::max(0.0, pos(rng)), std::max(0.0, pos(rng)), size(rng), size(rng)}));
    std::vector<const formats::Annotation*> ptrs;
    for (const auto& b : boxes)
        ptrs.push_back(&b);
    int64_t next = 1;
    const auto out = clip_annotations(ptrs, tile, spec, 1, next);
    size_t expected = 0;
    for (const auto& b : boxes) {
        const BBox c = intersect(b.bbox, {0, 0, 1024, 1024});
        expected += c.w > 0 && c.h > 0 && c.area() / b.bbox.area() >= 0.3 - 1e-12 && std::min(c.w, c.h) >= 4;
    }
    EXPECT_EQ(out.size(), expected);
    for (const auto& c : out) {
        const auto& orig = boxes[c.provenance->orig_ann_id - 1];
        EXPECT_GE(c.bbox.area() / orig.bbox.area(), 0.3 - 1e-12);
        EXPECT_GE(std::min(c.bbox.w, c.bbox.h), 4);
        EXPECT_GE(c.bbox.x, 0);
        EXPECT_LE(c.bbox.x2(), 1024);
    }
}

TEST(Tiler, SplitCounts)
{
    EXPECT_EQ(split_counts(100, {0.7, 0.15, 0.15}), (std::array<size_t, 3>{70, 15, 15}));
    EXPECT_EQ(split_counts(10, {0.7, 0.15, 0.15}), (std::array<size_t, 3>{7, 2, 1}));
    EXPECT_EQ(split_counts(24, {0.7, 0.15, 0.15}), (std::array<size_t, 3>{17, 3, 4}));
    for (size_t n = 3; n < 500; ++n) {
        const auto c = split_counts(n, {0.7, 0.15, 0.15});
        EXPECT_EQ(c[0] + c[1] + c[2], n);
    }
    EXPECT_THROW(split_counts(2, {0.7, 0.15, 0.15}), InvalidArgument);
    EXPECT_THROW(split_counts(10, {0.7, 0.2, 0.2}), InvalidArgument);
}

TEST(Tiler, SplitIsDeterministicAndDisjoint)
{
    const auto tiles = fake_tiles(100, 4);
    const auto a = split_dataset(tiles, {0.7, 0.15, 0.15}, 42);
    const auto b = split_dataset(tiles, {0.7, 0.15, 0.15}, 42);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a[0].size(), 70u);
    EXPECT_EQ(a[1].size(), 15u);
    EXPECT_EQ(a[2].size(), 15u);
    std::set<size_t> all;
    for (const auto& s : a)
        all.insert(s.begin(), s.end());
    EXPECT_EQ(all.size(), 100u);
    EXPECT_NE(split_dataset(tiles, {0.7, 0.15, 0.15}, 43), a);

    // The permutation depends only on the seed.
    EXPECT_EQ(seeded_permutation(8, 42), seeded_permutation(8, 42));
    EXPECT_EQ(seeded_permutation(0, 1).size(), 0u);

    const auto g = split_dataset(tiles, {0.7, 0.15, 0.15}, 42, true);
    std::map<int64_t, int> split_of_source;
    size_t total = 0;
    for (int s = 0; s < 3; ++s) {
        total += g[s].size();
        for (size_t i : g[s]) {
            const auto [it, fresh] = split_of_source.emplace(tiles[i].source_image_id, s);
            EXPECT_EQ(it->second, s) << "source split across sets";
        }
    }
    EXPECT_EQ(total, 100u);
    EXPECT_EQ(g[0].size() % 4, 0u);
}

TEST(Tiler, NmsKeepsHigherScoreOfDuplicates)
{
    // Translated copies with IoU 0.9.
    const BBox a{100, 100, 100, 100}, b{100, 100, 90, 100};
    ASSERT_NEAR(iou(a, b), 0.9, 1e-12);
    EXPECT_EQ(nms({a, b}, {0.6, 0.8}, 0.5), (std::vector<bool>{false, true}));
    EXPECT_EQ(nms({a, {300, 300, 10, 10}}, {0.6, 0.8}, 0.5), (std::vector<bool>{true, true}));
}

TEST(Tiler, NmsMatchesBruteForce)
{
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> pos(0, 200), size(10, 60), score(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<BBox> boxes;
        std::vector<double> scores;
        const int n = 1 + trial % 30;
        for (int i = 0; i < n; ++i) {
            boxes.push_back({pos(rng), pos(rng), size(rng), size(rng)});
            // Coarse scores force ties.
            scores.push_back(std::round(score(rng) * 5) / 5);
        }
        for (double thr : {0.3, 0.5, 0.7})
            ASSERT_EQ(nms(boxes, scores, thr), brute_nms(boxes, scores, thr)) << trial;
    }
}

TEST(Tiler, ClipThenMergeRecoversEveryBox)
{
    formats::AnnotationSet set;
    set.categories = {{1, "plant", {}}};
    set.images = {{1, "a.jpg", 2500, 1800, {}}, {2, "b.jpg", 1100, 1100, {}}};
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    int64_t id = 1;
    for (const auto& im : set.images)
        for (int i = 0; i < 150; ++i) {
            const double w = 10 + 80 * u(rng), h = 10 + 80 * u(rng);
            const BBox b{u(rng) * (im.width - w), u(rng) * (im.height - h), w, h};
            // Distinct plants do not overlap.
            if (std::any_of(set.annotations.begin(), set.annotations.end(),
                            [&](const auto& o) { return o.image_id == im.id && iou(o.bbox, b) > 0; }))
                continue;
            set.annotations.push_back(ann(id++, im.id, b));
        }
    TileSpec spec;
    spec.min_retention = 0;
    spec.min_box_px = 0;
    const auto tiles = tile_dataset(set, spec);
    const std::array<std::vector<size_t>, 3> splits{[&] {
        std::vector<size_t> all(tiles.size());
        std::iota(all.begin(), all.end(), 0);
        return all;
    }(), {}, {}};
    // Tile annotations stand in for detections.
    formats::DetectionSet dets = split_annotations(tiles, splits[0], set.categories);
    for (auto& a : dets.annotations)
        a.score = 1.0;
    const auto merged = merge_tile_detections(dets, tile_records(tiles, splits), 0.99);
    for (const auto& orig : set.annotations) {
        bool found = false;
        for (const auto& m : merged.annotations)
            found |= m.image_id == orig.image_id && std::abs(m.bbox.x - orig.bbox.x) < 1e-9
                     && std::abs(m.bbox.y - orig.bbox.y) < 1e-9 && std::abs(m.bbox.w - orig.bbox.w) < 1e-9
                     && std::abs(m.bbox.h - orig.bbox.h) < 1e-9;
        ASSERT_TRUE(found) << "box " << orig.id;
    }
    // With the default threshold every original appears exactly once.
    const auto dedup = merge_tile_detections(dets, tile_records(tiles, splits), 0.5);
    size_t exact = 0;
    for (const auto& m : dedup.annotations)
        for (const auto& orig : set.annotations)
            exact += m.image_id == orig.image_id && iou(m.bbox, orig.bbox) > 1 - 1e-9;
    EXPECT_EQ(exact, set.annotations.size());
    EXPECT_EQ(dedup.images.size(), 2u);
}

TEST(Tiler, WritesDatasetLayout)
{
    TempDir dir;
    fs::create_directories(dir.path() / "img");
    cv::Mat img(1200, 1500, CV_8UC3);
    for (int y = 0; y < img.rows; ++y)
        for (int x = 0; x < img.cols; ++x)
            img.at<cv::Vec3b>(y, x) = cv::Vec3b(x % 251, y % 241, (x + y) % 239);
    ASSERT_TRUE(cv::imwrite(dir.file("img/src.png"), img));

    formats::AnnotationSet set;
    set.categories = {{1, "plant", {}}};
    set.images = {{1, "src.png", 1500, 1200, {}}};
    set.annotations = {ann(1, 1, {10, 10, 50, 50}), ann(2, 1, {1000, 1000, 60, 60})};
    const auto tiles = tile_dataset(set);
    ASSERT_EQ(tiles.size(), 4u);
    const auto splits = split_dataset(tiles, {0.5, 0.25, 0.25}, 7);
    write_tiled_dataset(tiles, splits, set.categories, dir.file("img"), dir.file("out"));

    for (int s = 0; s < 3; ++s) {
        const auto coco = formats::read_coco(dir.file(std::string("out/") + kSplitNames[s] + "/annotations.json"));
        EXPECT_EQ(coco.images.size(), splits[s].size());
        for (const auto& im : coco.images) {
            const cv::Mat crop =
                cv::imread(dir.file(std::string("out/") + kSplitNames[s] + "/images/" + im.file_name), cv::IMREAD_UNCHANGED);
            ASSERT_EQ(crop.cols, im.width);
            const Tile& t = tiles[im.id - 1];
            const cv::Mat ref = img(cv::Rect(t.rect.x, t.rect.y, t.rect.w, t.rect.h));
            EXPECT_EQ(cv::norm(crop, ref, cv::NORM_INF), 0.0);
        }
    }
    const auto index = read_tile_index(dir.file("out/tiles.csv"));
    ASSERT_EQ(index.size(), 4u);
    EXPECT_EQ(index[0].tile_file, "src_x0_y0.png");
    EXPECT_EQ(index[3].rect, (TileRect{476, 176, 1024, 1024}));
}
