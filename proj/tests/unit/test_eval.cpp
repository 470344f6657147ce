#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "orthotrace/error.hpp"
#include "orthotrace/eval.hpp"
#include "oracles.hpp"

using namespace orthotrace;
using orthotrace::testing::oracle_ap;

namespace {

formats::Annotation box(int64_t id, int64_t image, BBox b, std::optional<double> score = std::nullopt)
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

formats::AnnotationSet scene(int images = 1)
{
    formats::AnnotationSet s;
    for (int i = 1; i <= images; ++i)
        s.images.push_back({i, "img" + std::to_string(i) + ".jpg", 1000, 1000, {}});
    s.categories = {{1, "plant", {}}};
    return s;
}

}  // namespace

TEST(Eval, IouExamples)
{
    EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
    EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {5, 5, 2, 2}), 0.0);
    EXPECT_NEAR(iou({0, 0, 2, 2}, {1, 1, 2, 2}), 1.0 / 7.0, 1e-15);
}

TEST(Eval, MatchingRules)
{
    auto gts = scene();
    gts.annotations = {box(1, 1, {0, 0, 10, 10})};
    auto dets = scene();
    // IoU 0.6: 10x10 against a shifted box with intersection 7.5x10.
    dets.annotations = {box(1, 1, {2.5, 0, 10, 10}, 0.9)};
    ASSERT_NEAR(iou(dets.annotations[0].bbox, gts.annotations[0].bbox), 0.6, 1e-12);
    auto m = match_greedy(dets, gts, 0.5);
    EXPECT_EQ(m.tp, 1);
    m = match_greedy(dets, gts, 0.7);
    EXPECT_EQ(m.tp, 0);
    EXPECT_EQ(m.fp, 1);
    EXPECT_EQ(m.fn, 1);

    dets.annotations = {box(1, 1, {0, 0, 10, 10}, 0.4), box(2, 1, {0.5, 0, 10, 10}, 0.8)};
    m = match_greedy(dets, gts, 0.5);
    ASSERT_EQ(m.pairs.size(), 1u);
    EXPECT_EQ(m.pairs[0].det_id, 2);
    EXPECT_EQ(m.fp, 1);
    EXPECT_EQ(m.det_order, (std::vector<int64_t>{2, 1}));

    // Equal IoU with two ground truths: the lower gt id wins.
    gts.annotations = {box(7, 1, {10, 0, 10, 10}), box(3, 1, {-10, 0, 10, 10})};
    dets.annotations = {box(1, 1, {-5, 0, 20, 10}, 0.9)};
    m = match_greedy(dets, gts, 0.15);  // both IoU 0.2
    ASSERT_EQ(m.pairs.size(), 1u);
    EXPECT_EQ(m.pairs[0].gt_id, 3);
}

TEST(Eval, HandSweepAndFrozenAp)
{
    auto gts = scene();
    gts.annotations = {box(1, 1, {0, 0, 10, 10}), box(2, 1, {100, 100, 10, 10})};
    auto dets = scene();
    dets.annotations = {box(1, 1, {0, 0, 10, 10}, 0.9), box(2, 1, {500, 500, 10, 10}, 0.8),
                        box(3, 1, {100, 100, 10, 10}, 0.7)};
    const PrCurve c = pr_curve(dets, gts, 0.5);
    ASSERT_EQ(c.points.size(), 3u);
    EXPECT_DOUBLE_EQ(c.points[0].recall, 0.5);
    EXPECT_DOUBLE_EQ(c.points[0].precision, 1.0);
    EXPECT_DOUBLE_EQ(c.points[1].recall, 0.5);
    EXPECT_DOUBLE_EQ(c.points[1].precision, 0.5);
    EXPECT_DOUBLE_EQ(c.points[2].recall, 1.0);
    EXPECT_NEAR(c.points[2].precision, 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(c.f1, 0.8, 1e-12);
    // Exact rational value 253/303 from the interpolation oracle.
    EXPECT_NEAR(average_precision(c), 253.0 / 303.0, 1e-12);
    EXPECT_NEAR(average_precision(c, ApMethod::AllPoint), 0.5 + 0.5 * 2.0 / 3.0, 1e-12);
}

TEST(Eval, PerfectAndEmptyCases)
{
    auto gts = scene();
    gts.annotations = {box(1, 1, {0, 0, 10, 10})};
    auto dets = scene();
    dets.annotations = {box(1, 1, {0, 0, 10, 10}, 1.0)};
    const PrCurve c = pr_curve(dets, gts, 0.5);
    ASSERT_EQ(c.points.size(), 1u);
    EXPECT_EQ(c.points[0].recall, 1.0);
    EXPECT_EQ(c.points[0].precision, 1.0);
    EXPECT_EQ(c.f1, 1.0);
    EXPECT_EQ(average_precision(c), 1.0);
    EXPECT_EQ(mean_ap(dets, gts).map5095, 1.0);

    const PrCurve none = pr_curve(scene(), gts, 0.5);
    EXPECT_EQ(none.recall, 0.0);
    EXPECT_EQ(average_precision(none), 0.0);
    EXPECT_THROW(average_precision(pr_curve(dets, scene(), 0.5)), InvalidArgument);
}

TEST(Eval, JitterLowersStrictThresholds)
{
    auto gts = scene();
    auto dets = scene();
    for (int i = 0; i < 40; ++i) {
        const BBox b{i * 20.0, i * 10.0, 16, 16};
        gts.annotations.push_back(box(i + 1, 1, b));
        // 15% offset of the box width.
        dets.annotations.push_back(box(i + 1, 1, {b.x + 0.15 * b.w, b.y, b.w, b.h}, 0.5 + i / 100.0));
    }
    const MeanAp m = mean_ap(dets, gts);
    EXPECT_GT(m.ap50, 0.99);
    EXPECT_EQ(m.per_iou[8], 0.0);  // IoU 0.739 misses 0.90
    EXPECT_GT(m.ap50, m.per_iou[8] + 0.9);
    for (int i = 1; i < 10; ++i)
        EXPECT_LE(m.per_iou[i], m.per_iou[i - 1]);
    EXPECT_NEAR(m.map5095, 0.5, 1e-12);  // IoU 0.7391 passes 0.50 ... 0.70
}

TEST(Eval, MatchesBruteForceOracleOnRandomScenes)
{
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> pos(0, 120), size(8, 40), jitter(-6, 6), u(0, 1);
    for (int trial = 0; trial < 300; ++trial) {
        auto gts = scene(2);
        auto dets = scene(2);
        const int ng = 1 + trial % 20;
        for (int i = 0; i < ng; ++i)
            gts.annotations.push_back(box(i + 1, 1 + i % 2, {pos(rng), pos(rng), size(rng), size(rng)}));
        const int nd = static_cast<int>(u(rng) * 20);
        for (int i = 0; i < nd; ++i) {
            BBox b;
            if (u(rng) < 0.7) {
                const auto& g = gts.annotations[static_cast<size_t>(u(rng) * ng)].bbox;
                b = {g.x + jitter(rng), g.y + jitter(rng), std::max(2.0, g.w + jitter(rng)), std::max(2.0, g.h + jitter(rng))};
            } else {
                b = {pos(rng), pos(rng), size(rng), size(rng)};
            }
            dets.annotations.push_back(box(i + 1, 1 + static_cast<int>(u(rng) * 2), b, std::round(u(rng) * 20) / 20));
        }
        const MeanAp m = mean_ap(dets, gts);
        const auto thr = coco_iou_thresholds();
        double sum = 0;
        for (size_t k = 0; k < thr.size(); ++k) {
            const double o = oracle_ap(dets, gts, thr[k]);
            ASSERT_NEAR(m.per_iou[k], o, 1e-9) << trial << " @" << thr[k];
            sum += o;
        }
        ASSERT_NEAR(m.map5095, sum / 10, 1e-9);
        // Rank-only dependence.
        auto scaled = dets;
        for (auto& a : scaled.annotations)
            *a.score *= 0.37;
        ASSERT_EQ(mean_ap(scaled, gts).per_iou, m.per_iou);
        for (double v : m.per_iou)
            ASSERT_TRUE(v >= 0 && v <= 1);
    }
}

TEST(Eval, GreedyEqualsOptimalWhenAllPairsQualify)
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> d(-0.4, 0.4);
    for (int trial = 0; trial < 50; ++trial) {
        auto gts = scene();
        auto dets = scene();
        const int ng = 1 + trial % 4, nd = 1 + (trial / 4) % 4;
        // All boxes nearly coincide, so every IoU clears 0.5 and ties are unlikely.
        for (int i = 0; i < ng; ++i)
            gts.annotations.push_back(box(i + 1, 1, {d(rng), d(rng), 20 + d(rng), 20 + d(rng)}));
        for (int i = 0; i < nd; ++i)
            dets.annotations.push_back(box(i + 1, 1, {d(rng), d(rng), 20 + d(rng), 20 + d(rng)}, 0.1 + 0.2 * i));
        // Maximum matching size over all injective assignments.
        std::vector<int> perm(std::max(ng, nd));
        std::iota(perm.begin(), perm.end(), 0);
        int best = 0;
        do {
            int n = 0;
            for (int i = 0; i < nd; ++i)
                n += perm[i] < ng && iou(dets.annotations[i].bbox, gts.annotations[perm[i]].bbox) >= 0.5;
            best = std::max(best, n);
        } while (std::next_permutation(perm.begin(), perm.end()));
        EXPECT_EQ(match_greedy(dets, gts, 0.5).tp, best);
    }
}

TEST(Eval, SizeBuckets)
{
    EXPECT_EQ(size_bucket(900), SizeBucket::Small);
    EXPECT_EQ(size_bucket(1023.999), SizeBucket::Small);
    EXPECT_EQ(size_bucket(1024), SizeBucket::Medium);
    EXPECT_EQ(size_bucket(9216), SizeBucket::Medium);
    EXPECT_EQ(size_bucket(9216.5), SizeBucket::Large);
    EXPECT_EQ(size_bucket(10000), SizeBucket::Large);

    auto gts = scene();
    gts.annotations = {box(1, 1, {0, 0, 30, 30}), box(2, 1, {100, 100, 50, 50}), box(3, 1, {300, 300, 100, 100})};
    auto dets = scene();
    dets.annotations = {box(1, 1, {0, 0, 30, 30}, 0.9), box(2, 1, {300, 300, 100, 100}, 0.8),
                        box(3, 1, {600, 600, 20, 20}, 0.7)};
    EvalOptions o;
    o.by_size = true;
    const auto j = evaluate(dets, gts, o);
    EXPECT_EQ(j["tp"], 2);
    EXPECT_EQ(j["by_size"]["small"]["tp"], 1);
    EXPECT_EQ(j["by_size"]["small"]["fp"], 1);  // the unmatched 400 px^2 box
    EXPECT_EQ(j["by_size"]["medium"]["fn"], 1);
    EXPECT_EQ(j["by_size"]["medium"]["fp"], 0);
    EXPECT_EQ(j["by_size"]["large"]["precision"], 1.0);
    EXPECT_EQ(j["by_size"]["large"]["n_gt"], 1);
}

TEST(Eval, ProjectionValidation)
{
    formats::AnnotationSet manual = scene();
    std::vector<ProjectionResult> proj;
    for (int i = 0; i < 10; ++i) {
        manual.annotations.push_back(box(i + 1, 1, {i * 50.0, 0, 20, 20}));
        ProjectionResult r;
        r.det_id = i + 1;
        r.score = 0.9;
        r.status = ProjectionStatus::Ok;
        r.ortho_bbox = BBox{i * 50.0, 0, 20, 20};
        r.world_bbox = WorldBox{0, 0, 1, 1};
        proj.push_back(r);
    }
    auto v = projection_validation(proj, manual);
    EXPECT_EQ(v.georef_rate, 1.0);
    EXPECT_EQ(v.frac_iou_ge_thr, 1.0);
    EXPECT_EQ(v.iou_histogram[9], 10);

    proj[0].status = ProjectionStatus::OutOfDsm;
    proj[0].ortho_bbox.reset();
    proj[1].ortho_bbox = BBox{50 + 8, 0, 20, 20};  // IoU 12/28
    v = projection_validation(proj, manual);
    EXPECT_EQ(v.total, 10);
    EXPECT_EQ(v.ok, 9);
    EXPECT_DOUBLE_EQ(v.georef_rate, 0.9);
    EXPECT_EQ(v.matched, 8);
    EXPECT_DOUBLE_EQ(v.frac_iou_ge_thr, 8.0 / 9.0);
    EXPECT_EQ(v.paired, 9);
    EXPECT_EQ(std::accumulate(v.iou_histogram.begin(), v.iou_histogram.end(), 0), v.paired);
    EXPECT_EQ(v.iou_histogram[4], 1);
}
