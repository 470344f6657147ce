#include "orthotrace/eval.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <tuple>

#include "orthotrace/error.hpp"

namespace orthotrace {

namespace {

using formats::Annotation;

std::vector<const Annotation*> by_score(const formats::DetectionSet& dets)
{
    std::vector<const Annotation*> order;
    for (const auto& d : dets.annotations)
        order.push_back(&d);
    std::stable_sort(order.begin(), order.end(), [](const Annotation* a, const Annotation* b) {
        const double sa = a->score.value_or(1.0), sb = b->score.value_or(1.0);
        if (sa != sb)
            return sa > sb;
        return a->id < b->id;
    });
    return order;
}

// Detections and ground truths are paired through image file names so
// sets with independent image ids can be compared.
std::map<int64_t, std::string> image_keys(const formats::AnnotationSet& s)
{
    std::map<int64_t, std::string> m;
    for (const auto& im : s.images)
        m[im.id] = im.file_name;
    return m;
}

}  // namespace

MatchResult match_greedy(const formats::DetectionSet& dets, const formats::AnnotationSet& gts, double iou_thr,
                         const MatchFilter& filter)
{
    const auto det_img = image_keys(dets);
    const auto gt_img = image_keys(gts);
    auto key_of = [](const std::map<int64_t, std::string>& m, int64_t id) {
        const auto it = m.find(id);
        return it != m.end() ? it->second : "#" + std::to_string(id);
    };

    struct Gt {
        const Annotation* a;
        bool ignore;
        bool taken = false;
    };
    std::map<std::pair<std::string, int64_t>, std::vector<Gt>> pool;
    MatchResult r;
    for (const auto& g : gts.annotations) {
        const bool ign = filter.ignore_gt && filter.ignore_gt(g);
        pool[{key_of(gt_img, g.image_id), g.category_id}].push_back({&g, ign});
        r.n_gt += ign ? 0 : 1;
    }
    for (auto& [k, v] : pool)
        std::sort(v.begin(), v.end(), [](const Gt& a, const Gt& b) { return a.a->id < b.a->id; });

    for (const Annotation* d : by_score(dets)) {
        auto it = pool.find({key_of(det_img, d->image_id), d->category_id});
        Gt* best = nullptr;
        double best_iou = -1;
        if (it != pool.end()) {
            for (bool want_ignored : {false, true}) {
                for (auto& g : it->second) {
                    if (g.taken || g.ignore != want_ignored)
                        continue;
                    const double v = iou(d->bbox, g.a->bbox);
                    if (v >= iou_thr && v > best_iou) {
                        best = &g;
                        best_iou = v;
                    }
                }
                if (best)
                    break;
            }
        }
        if (best) {
            best->taken = true;
            if (best->ignore)
                continue;
            ++r.tp;
            r.pairs.push_back({d->id, best->a->id, best_iou});
            r.det_order.push_back(d->id);
            r.scores.push_back(d->score.value_or(1.0));
            r.is_tp.push_back(true);
        } else {
            if (filter.ignore_unmatched_det && filter.ignore_unmatched_det(*d))
                continue;
            ++r.fp;
            r.det_order.push_back(d->id);
            r.scores.push_back(d->score.value_or(1.0));
            r.is_tp.push_back(false);
        }
    }
    r.fn = r.n_gt - r.tp;
    return r;
}

PrCurve pr_curve(const MatchResult& m)
{
    PrCurve c;
    c.n_gt = m.n_gt;
    int tp = 0, fp = 0;
    for (bool t : m.is_tp) {
        tp += t;
        fp += !t;
        c.points.push_back({m.n_gt ? static_cast<double>(tp) / m.n_gt : 0.0, static_cast<double>(tp) / (tp + fp)});
    }
    c.precision = (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
    c.recall = m.n_gt ? static_cast<double>(tp) / m.n_gt : 0.0;
    c.f1 = (c.precision + c.recall) > 0 ? 2 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
    return c;
}

PrCurve pr_curve(const formats::DetectionSet& dets, const formats::AnnotationSet& gts, double iou_thr)
{
    return pr_curve(match_greedy(dets, gts, iou_thr));
}

double average_precision(const PrCurve& curve, ApMethod method)
{
    if (curve.n_gt <= 0)
        throw InvalidArgument("average precision is undefined without ground truth");
    const size_t n = curve.points.size();
    // Precision envelope: best precision at this or any later point.
    std::vector<double> env(n);
    double best = 0;
    for (size_t i = n; i-- > 0;) {
        best = std::max(best, curve.points[i].precision);
        env[i] = best;
    }
    if (method == ApMethod::AllPoint) {
        double ap = 0, prev_r = 0;
        for (size_t i = 0; i < n; ++i) {
            ap += (curve.points[i].recall - prev_r) * env[i];
            prev_r = curve.points[i].recall;
        }
        return ap;
    }
    double sum = 0;
    size_t k = 0;
    for (int i = 0; i <= 100; ++i) {
        const double r = i / 100.0;
        while (k < n && curve.points[k].recall < r)
            ++k;
        if (k < n)
            sum += env[k];
    }
    return sum / 101.0;
}

std::array<double, 10> coco_iou_thresholds()
{
    std::array<double, 10> t{};
    for (int i = 0; i < 10; ++i)
        t[i] = (50 + 5 * i) / 100.0;
    return t;
}

MeanAp mean_ap(const formats::DetectionSet& dets, const formats::AnnotationSet& gts, ApMethod method,
               const MatchFilter& filter)
{
    MeanAp m;
    const auto thr = coco_iou_thresholds();
    double sum = 0;
    for (size_t i = 0; i < thr.size(); ++i) {
        m.per_iou[i] = average_precision(pr_curve(match_greedy(dets, gts, thr[i], filter)), method);
        sum += m.per_iou[i];
    }
    m.ap50 = m.per_iou[0];
    m.map5095 = sum / thr.size();
    return m;
}

std::string to_string(SizeBucket b)
{
    switch (b) {
    case SizeBucket::Small: return "small";
    case SizeBucket::Medium: return "medium";
    case SizeBucket::Large: return "large";
    }
    return "medium";
}

SizeBucket size_bucket(double area)
{
    if (area < 1024)
        return SizeBucket::Small;
    if (area <= 9216)
        return SizeBucket::Medium;
    return SizeBucket::Large;
}

namespace {

nlohmann::json metrics_json(const formats::DetectionSet& dets, const formats::AnnotationSet& gts,
                            const EvalOptions& opts, const MatchFilter& filter)
{
    const MatchResult m = match_greedy(dets, gts, opts.iou_thr, filter);
    const PrCurve c = pr_curve(m);
    nlohmann::json j{{"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"n_gt", m.n_gt},
                     {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}};
    if (m.n_gt > 0) {
        j["ap"] = average_precision(c, opts.method);
        const MeanAp ma = mean_ap(dets, gts, opts.method, filter);
        j["ap50"] = ma.ap50;
        j["map5095"] = ma.map5095;
        j["per_iou"] = ma.per_iou;
    } else {
        j["ap"] = nullptr;
        j["ap50"] = nullptr;
        j["map5095"] = nullptr;
    }
    return j;
}

}  // namespace

nlohmann::json evaluate(const formats::DetectionSet& dets, const formats::AnnotationSet& gts, const EvalOptions& opts)
{
    nlohmann::json j = metrics_json(dets, gts, opts, {});
    j["iou_thr"] = opts.iou_thr;
    j["n_dets"] = dets.annotations.size();
    j["ap_method"] = opts.method == ApMethod::Coco101 ? "coco101" : "all_point";
    if (opts.by_size) {
        nlohmann::json sizes = nlohmann::json::object();
        for (auto b : {SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large}) {
            MatchFilter f;
            f.ignore_gt = [b](const formats::Annotation& g) { return size_bucket(g.bbox.area()) != b; };
            f.ignore_unmatched_det = f.ignore_gt;
            sizes[to_string(b)] = metrics_json(dets, gts, opts, f);
        }
        j["by_size"] = sizes;
    }
    return j;
}

nlohmann::json ProjectionValidation::to_json() const
{
    return {{"total", total},       {"ok", ok},           {"georef_rate", georef_rate},
            {"matched", matched},   {"iou_thr", iou_thr}, {"frac_iou_ge_thr", frac_iou_ge_thr},
            {"paired", paired},     {"iou_histogram", iou_histogram}};
}

ProjectionValidation projection_validation(const std::vector<ProjectionResult>& projected,
                                           const formats::AnnotationSet& manual, double iou_thr)
{
    ProjectionValidation v;
    v.iou_thr = iou_thr;
    v.total = static_cast<int>(projected.size());

    // Projections become detections on a single orthomosaic image.
    formats::DetectionSet dets;
    formats::AnnotationSet gts = manual;
    const std::string ortho = "orthomosaic";
    dets.images = {{1, ortho, 0, 0, {}}};
    for (auto& g : gts.annotations) {
        g.image_id = 1;
        g.category_id = 1;
    }
    gts.images = {{1, ortho, 0, 0, {}}};
    int64_t id = 1;
    for (const auto& p : projected) {
        if (!p.ok())
            continue;
        ++v.ok;
        formats::Annotation a;
        a.id = id++;
        a.image_id = 1;
        a.category_id = 1;
        a.bbox = *p.ortho_bbox;
        a.area = a.bbox.area();
        a.score = p.score;
        dets.annotations.push_back(std::move(a));
    }
    v.georef_rate = v.total ? static_cast<double>(v.ok) / v.total : 0.0;
    const MatchResult m = match_greedy(dets, gts, iou_thr);
    v.matched = m.tp;
    v.frac_iou_ge_thr = v.ok ? static_cast<double>(m.tp) / v.ok : 0.0;

    const MatchResult any = match_greedy(dets, gts, 1e-12);
    v.paired = any.tp;
    for (const auto& p : any.pairs)
        ++v.iou_histogram[std::min(9, static_cast<int>(p.iou * 10))];
    return v;
}

}  // namespace orthotrace
