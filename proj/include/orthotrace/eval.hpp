#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthotrace/bbox.hpp"
#include "orthotrace/formats/coco.hpp"
#include "orthotrace/projector.hpp"

namespace orthotrace {

struct MatchPair {
    int64_t det_id = 0;
    int64_t gt_id = 0;
    double iou = 0;
};

struct MatchResult {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    std::vector<MatchPair> pairs;
    /// Detections in descending score order (ties by id) with their outcome.
    /// Ignored detections (see MatchOptions) are left out.
    std::vector<int64_t> det_order;
    std::vector<double> scores;
    std::vector<bool> is_tp;
    int n_gt = 0;  // ground truths that count (not ignored)
};

struct MatchFilter {
    /// Ground truths outside the evaluated subset: detections may match them
    /// but are then neither tp nor fp, and missing them is not a fn.
    std::function<bool(const formats::Annotation&)> ignore_gt;
    /// Unmatched detections for which this returns true are dropped instead
    /// of counting as fp.
    std::function<bool(const formats::Annotation&)> ignore_unmatched_det;
};

/// Greedy matching per image and category: detections in descending score
/// order each claim the unmatched ground truth with the highest IoU >=
/// iou_thr, ties going to the lower gt id. Regular ground truths are tried
/// before ignored ones.
MatchResult match_greedy(const formats::DetectionSet& dets, const formats::AnnotationSet& gts, double iou_thr,
                         const MatchFilter& filter = {});

struct PrPoint {
    double recall = 0;
    double precision = 0;
};

struct PrCurve {
    std::vector<PrPoint> points;  // one per detection, descending score
    int n_gt = 0;
    double precision = 0;  // over all detections
    double recall = 0;
    double f1 = 0;
};

PrCurve pr_curve(const MatchResult& m);
PrCurve pr_curve(const formats::DetectionSet& dets, const formats::AnnotationSet& gts, double iou_thr);

enum class ApMethod { Coco101, AllPoint };

/// COCO 101-point interpolated AP: mean over r in {0, 0.01, ..., 1} of the
/// best precision at recall >= r (0 when unreached). Throws InvalidArgument
/// when there are no ground truths.
double average_precision(const PrCurve& curve, ApMethod method = ApMethod::Coco101);

struct MeanAp {
    double ap50 = 0;
    double map5095 = 0;
    std::array<double, 10> per_iou{};  // IoU 0.50, 0.55, ..., 0.95
};

/// IoU thresholds 0.50 ... 0.95 in steps of 0.05.
std::array<double, 10> coco_iou_thresholds();

MeanAp mean_ap(const formats::DetectionSet& dets, const formats::AnnotationSet& gts,
               ApMethod method = ApMethod::Coco101, const MatchFilter& filter = {});

enum class SizeBucket { Small, Medium, Large };
std::string to_string(SizeBucket b);

/// small < 1024 px^2 <= medium <= 9216 px^2 < large.
SizeBucket size_bucket(double area);

struct EvalOptions {
    double iou_thr = 0.5;
    bool by_size = false;
    ApMethod method = ApMethod::Coco101;
};

/// Precision/recall/F1 at iou_thr, AP50, mAP and (optionally) the same per
/// size bucket. Scores are not thresholded here.
nlohmann::json evaluate(const formats::DetectionSet& dets, const formats::AnnotationSet& gts,
                        const EvalOptions& opts = {});

struct ProjectionValidation {
    int total = 0;
    int ok = 0;
    double georef_rate = 0;
    int matched = 0;             // ok projections matching a manual box at IoU >= iou_thr
    double frac_iou_ge_thr = 0;  // matched / ok
    double iou_thr = 0.5;
    /// IoU of every ok projection paired (greedily, any overlap) with a
    /// manual box, in ten bins of width 0.1; the last bin includes 1.0.
    std::array<int, 10> iou_histogram{};
    int paired = 0;

    nlohmann::json to_json() const;
};

/// Compares ortho boxes of projected detections against manual annotations
/// drawn on the orthomosaic. `total` counts every projection attempt.
ProjectionValidation projection_validation(const std::vector<ProjectionResult>& projected,
                                           const formats::AnnotationSet& manual, double iou_thr = 0.5);

}  // namespace orthotrace
