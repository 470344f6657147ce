#pragma once

// Reference implementations and frozen fixtures shared by the unit tests
// and the acceptance runner. The oracles are written out directly and do
// not call the library code they check.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <optional>
#include <vector>

#include "orthotrace/coverage.hpp"
#include "orthotrace/formats/coco.hpp"
#include "orthotrace/geodesy.hpp"

namespace orthotrace::testing {

// ------------------------------------------------------------------ geodesy

struct UtmFixture {
    double lat, lon;
    int zone;
    Hemisphere hemi;
    double easting, northing;
};

// Frozen from an independent geodesy library (PROJ via pyproj, EPSG:326xx/327xx).
inline const UtmFixture kUtmFixtures[] = {
    {38.95, -92.33, 15, Hemisphere::North, 558057.5654545053, 4311441.4537809305},
    {-33.9, 18.4, 34, Hemisphere::South, 259583.22166043136, 6245888.045440769},
    {0.0, 3.0, 31, Hemisphere::North, 500000.000000001, 0.0},
    {60.0, -92.33, 15, Hemisphere::North, 537370.6211455364, 6651600.420611663},
};

// --------------------------------------------------------------- statistics

inline const std::vector<double> kKsA = {0.0, 3.75, 7.5, 1.15, 4.9, 8.65, 2.3, 6.05, 9.8, 3.45,
                                         7.2, 0.85, 4.6, 8.35, 2.0, 5.75, 9.5, 3.15, 6.9, 10.65,
                                         4.3, 8.05, 1.7, 5.45, 9.2, 2.85, 6.6, 10.35, 4.0, 7.75};
inline const std::vector<double> kKsB = {0.0,  6.13, 1.59, 7.72, 1.98, 8.11, 3.57, 9.7,  3.96, 10.09,
                                         5.55, 1.01, 5.94, 1.4,  7.53, 2.99, 7.92, 3.38, 9.51, 4.97,
                                         9.9,  5.36, 0.82, 6.95, 1.21, 7.34, 2.8,  8.93, 3.19, 9.32};
// scipy.stats.ks_2samp D; p from scipy.stats.kstwobign.sf at D sqrt(nm/(n+m)).
inline constexpr double kKsAB_D = 3.0 / 30.0, kKsAB_P = 0.998265735385231;
inline constexpr double kKsShift_D = 5.0 / 30.0, kKsShift_P = 0.7989513616577224;  // kKsA vs kKsA + 1.3
inline constexpr double kKsCD_D = 0.24, kKsCD_P = 0.6045765025351111;            // see ks_c / ks_d
inline constexpr double kKolmogorovSf1 = 0.26999967167735456;

inline std::vector<double> ks_c()
{
    std::vector<double> c;
    for (int i = 0; i < 17; ++i)
        c.push_back(0.5 * i);
    return c;
}

inline std::vector<double> ks_d()
{
    std::vector<double> d;
    for (int i = 0; i < 25; ++i)
        d.push_back(0.37 * i + 1);
    return d;
}

inline const std::vector<double> kPearsonX{1.2, 2.4, 3.1, 4.8, 5.0, 6.3, 7.7, 8.1, 9.4, 10.2};
inline const std::vector<double> kPearsonY{2.0, 2.9, 4.4, 5.1, 5.3, 7.9, 8.0, 9.6, 9.9, 12.5};
inline constexpr double kPearsonXY = 0.9813759920934335;  // scipy.stats.pearsonr

// --------------------------------------------------------------------- eval

// Independent reference: greedy matching and 101-point interpolation
// written out directly.
inline double oracle_ap(const formats::DetectionSet& dets, const formats::AnnotationSet& gts, double thr)
{
    std::vector<size_t> order(dets.annotations.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        const auto& x = dets.annotations[a];
        const auto& y = dets.annotations[b];
        return *x.score != *y.score ? *x.score > *y.score : x.id < y.id;
    });
    std::vector<bool> used(gts.annotations.size(), false);
    std::vector<double> rec, prec;
    int tp = 0, fp = 0;
    for (size_t di : order) {
        const auto& d = dets.annotations[di];
        int best = -1;
        double best_iou = thr;
        for (size_t g = 0; g < gts.annotations.size(); ++g) {
            const auto& gt = gts.annotations[g];
            if (used[g] || gt.image_id != d.image_id)
                continue;
            const double ix = std::max(0.0, std::min(d.bbox.x + d.bbox.w, gt.bbox.x + gt.bbox.w) - std::max(d.bbox.x, gt.bbox.x));
            const double iy = std::max(0.0, std::min(d.bbox.y + d.bbox.h, gt.bbox.y + gt.bbox.h) - std::max(d.bbox.y, gt.bbox.y));
            const double inter = ix * iy;
            const double v = inter / (d.bbox.w * d.bbox.h + gt.bbox.w * gt.bbox.h - inter);
            if (v >= best_iou && (best < 0 || v > best_iou || gt.id < gts.annotations[best].id)) {
                if (best >= 0 && v == best_iou && gt.id > gts.annotations[best].id)
                    continue;
                best = static_cast<int>(g);
                best_iou = v;
            }
        }
        if (best >= 0) {
            used[best] = true;
            ++tp;
        } else {
            ++fp;
        }
        rec.push_back(double(tp) / gts.annotations.size());
        prec.push_back(double(tp) / (tp + fp));
    }
    double sum = 0;
    for (int i = 0; i <= 100; ++i) {
        double m = 0;
        for (size_t k = 0; k < rec.size(); ++k)
            if (rec[k] >= i / 100.0)
                m = std::max(m, prec[k]);
        sum += m;
    }
    return sum / 101;
}

// ----------------------------------------------------------------- coverage

// Exhaustive minimum chain: subsets sorted by right end must start at or
// before lo, overlap each predecessor by min_overlap of their own length,
// and reach hi.
inline std::optional<size_t> brute_force_min_cover(const std::vector<Interval>& items, double lo, double hi, double h)
{
    const size_t n = items.size();
    std::optional<size_t> best;
    for (uint32_t mask = 1; mask < (1u << n); ++mask) {
        std::vector<Interval> s;
        for (size_t i = 0; i < n; ++i)
            if (mask & (1u << i))
                s.push_back(items[i]);
        if (best && s.size() >= *best)
            continue;
        std::sort(s.begin(), s.end(), [](const Interval& a, const Interval& b) { return a.hi < b.hi; });
        bool ok = s.front().lo <= lo && s.back().hi >= hi;
        for (size_t k = 1; ok && k < s.size(); ++k)
            ok = s[k].hi > s[k - 1].hi && s[k].lo <= s[k - 1].hi - h * (s[k].hi - s[k].lo);
        if (ok)
            best = s.size();
    }
    return best;
}

// ------------------------------------------------------------------ formats

// JPEG bytes with every APP1 segment removed, for comparing image payloads.
inline std::vector<uint8_t> strip_app1(const std::vector<uint8_t>& jpeg)
{
    std::vector<uint8_t> out(jpeg.begin(), jpeg.begin() + 2);
    size_t pos = 2;
    while (pos + 4 <= jpeg.size() && jpeg[pos] == 0xFF && jpeg[pos + 1] != 0xDA) {
        const size_t len = (size_t(jpeg[pos + 2]) << 8) | jpeg[pos + 3];
        if (jpeg[pos + 1] != 0xE1)
            out.insert(out.end(), jpeg.begin() + pos, jpeg.begin() + pos + 2 + len);
        pos += 2 + len;
    }
    out.insert(out.end(), jpeg.begin() + pos, jpeg.end());
    return out;
}

/// Byte builder for hand-assembled shapefile goldens.
struct ShpBytes {
    std::vector<uint8_t> b;
    void be32(uint32_t v)
    {
        for (int i = 3; i >= 0; --i)
            b.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void le32(uint32_t v)
    {
        for (int i = 0; i < 4; ++i)
            b.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void le64(double d)
    {
        uint64_t v;
        std::memcpy(&v, &d, 8);
        for (int i = 0; i < 8; ++i)
            b.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void header(uint32_t words)
    {
        be32(9994);
        for (int i = 0; i < 5; ++i)
            be32(0);
        be32(words);
        le32(1000);
        le32(5);
        for (double d : {0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0})
            le64(d);
    }
};

/// Expected .shp for rectangle_polygon(1, 0, 0, 1, 1): one closed clockwise ring.
inline std::vector<uint8_t> unit_square_shp()
{
    ShpBytes shp;
    shp.header(118);
    shp.be32(1);
    shp.be32(64);
    shp.le32(5);
    for (double d : {0.0, 0.0, 1.0, 1.0})
        shp.le64(d);
    shp.le32(1);
    shp.le32(5);
    shp.le32(0);
    for (auto [x, y] : std::vector<std::pair<double, double>>{{0, 0}, {0, 1}, {1, 1}, {1, 0}, {0, 0}}) {
        shp.le64(x);
        shp.le64(y);
    }
    return shp.b;
}

inline std::vector<uint8_t> unit_square_shx()
{
    ShpBytes shx;
    shx.header(54);
    shx.be32(50);
    shx.be32(64);
    return shx.b;
}

}  // namespace orthotrace::testing
