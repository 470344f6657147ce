#include "orthotrace/traits.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <tuple>

#include <spdlog/spdlog.h>

#include "orthotrace/error.hpp"
#include "orthotrace/formats/csv.hpp"
#include "orthotrace/io.hpp"
#include "orthotrace/number_format.hpp"
#include "orthotrace/parallel.hpp"

namespace orthotrace {

Ring PlantBox::ring() const
{
    return {{box.min_x, box.min_y}, {box.max_x, box.min_y}, {box.max_x, box.max_y}, {box.min_x, box.max_y}};
}

PlantBoxes boxes_to_plants(const std::vector<ProjectionResult>& results)
{
    PlantBoxes out;
    for (const auto& r : results) {
        if (!r.ok() || !r.world_bbox) {
            ++out.skipped;
            continue;
        }
        out.plants.push_back({r.det_id, *r.world_bbox});
    }
    if (out.skipped > 0)
        spdlog::info("traits: skipped {} rows without an ok projection", out.skipped);
    return out;
}

PlantBoxes ortho_annotations_to_plants(const formats::AnnotationSet& set, const AffineGeotransform& ortho)
{
    if (ortho.rot_x != 0 || ortho.rot_y != 0)
        throw InvalidArgument("orthomosaic transform must be north-up");
    PlantBoxes out;
    for (const auto& a : set.annotations) {
        // Edge coordinates sit half a pixel before the cell centers.
        const WorldXY p0 = pixel_to_world(ortho, a.bbox.x - 0.5, a.bbox.y - 0.5);
        const WorldXY p1 = pixel_to_world(ortho, a.bbox.x + a.bbox.w - 0.5, a.bbox.y + a.bbox.h - 0.5);
        out.plants.push_back({a.id, WorldBox{std::min(p0.x, p1.x), std::min(p0.y, p1.y), std::max(p0.x, p1.x),
                                             std::max(p0.y, p1.y)}});
    }
    return out;
}

std::vector<formats::Polygon> plant_polygons(const std::vector<PlantBox>& plants)
{
    std::vector<formats::Polygon> out;
    out.reserve(plants.size());
    for (const auto& p : plants)
        out.push_back(formats::rectangle_polygon(p.plant_id, p.box.min_x, p.box.min_y, p.box.max_x, p.box.max_y));
    return out;
}

std::vector<std::pair<int, int>> rasterize_polygon(const Ring& ring, const RasterGrid& grid)
{
    std::vector<std::pair<int, int>> cells;
    if (ring.size() < 3 || grid.width == 0 || grid.height == 0)
        return cells;
    const Bounds2 b = ring_bounds(ring);
    double c0 = INFINITY, c1 = -INFINITY, r0 = INFINITY, r1 = -INFINITY;
    for (const auto& [x, y] : {std::pair{b.min_x, b.min_y}, {b.max_x, b.min_y}, {b.min_x, b.max_y}, {b.max_x, b.max_y}}) {
        const PixelXY px = world_to_pixel(grid.gt, x, y);
        c0 = std::min(c0, px.col);
        c1 = std::max(c1, px.col);
        r0 = std::min(r0, px.row);
        r1 = std::max(r1, px.row);
    }
    const int col0 = std::max(0, static_cast<int>(std::floor(c0)) - 1);
    const int col1 = std::min(grid.width - 1, static_cast<int>(std::ceil(c1)) + 1);
    const int row0 = std::max(0, static_cast<int>(std::floor(r0)) - 1);
    const int row1 = std::min(grid.height - 1, static_cast<int>(std::ceil(r1)) + 1);
    for (int row = row0; row <= row1; ++row)
        for (int col = col0; col <= col1; ++col) {
            const WorldXY c = pixel_to_world(grid.gt, col, row);
            if (point_in_ring(ring, c.x, c.y))
                cells.emplace_back(col, row);
        }
    return cells;
}

StatSpec StatSpec::parse(const std::string& s)
{
    static const std::set<std::string> plain{"mean", "std", "min", "max", "median", "count"};
    if (plain.count(s))
        return {s, 0};
    if (s.size() > 1 && s[0] == 'p') {
        double q = 0;
        try {
            q = parse_double(s.substr(1));
        } catch (const ParseError&) {
            throw InvalidArgument("unknown statistic '" + s + "'");
        }
        if (!(q >= 0 && q <= 100))
            throw InvalidArgument("percentile out of range in '" + s + "'");
        return {s, q};
    }
    throw InvalidArgument("unknown statistic '" + s + "' (expected mean, std, min, max, median, count or pXX)");
}

std::vector<StatSpec> parse_stat_list(const std::string& comma_separated)
{
    std::vector<StatSpec> out;
    size_t start = 0;
    while (start <= comma_separated.size()) {
        size_t end = comma_separated.find(',', start);
        if (end == std::string::npos)
            end = comma_separated.size();
        std::string name = comma_separated.substr(start, end - start);
        name.erase(0, name.find_first_not_of(" \t"));
        name.erase(name.find_last_not_of(" \t") + 1);
        if (!name.empty()) {
            if (std::any_of(out.begin(), out.end(), [&](const StatSpec& s) { return s.name == name; }))
                throw InvalidArgument("statistic '" + name + "' requested twice");
            out.push_back(StatSpec::parse(name));
        }
        start = end + 1;
    }
    if (out.empty())
        throw InvalidArgument("no statistics requested");
    return out;
}

double percentile_sorted(const std::vector<double>& sorted, double q)
{
    if (sorted.empty())
        throw InvalidArgument("percentile of an empty sample");
    const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

StatValues zonal_stats(const Ring& ring, const RasterGrid& grid, const std::vector<StatSpec>& stats)
{
    std::vector<double> v;
    for (const auto& [col, row] : rasterize_polygon(ring, grid))
        if (grid.is_valid(col, row))
            v.push_back(grid.at(col, row));
    std::sort(v.begin(), v.end());

    StatValues out;
    const size_t n = v.size();
    const double mean = n ? std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n) : 0.0;
    for (const auto& s : stats) {
        std::optional<double> value;
        if (s.name == "count") {
            value = static_cast<double>(n);
        } else if (n == 0) {
        } else if (s.name == "mean") {
            value = mean;
        } else if (s.name == "std") {
            if (n >= 2) {
                double ss = 0;
                for (double x : v)
                    ss += (x - mean) * (x - mean);
                value = std::sqrt(ss / static_cast<double>(n - 1));
            }
        } else if (s.name == "min") {
            value = v.front();
        } else if (s.name == "max") {
            value = v.back();
        } else if (s.name == "median") {
            value = percentile_sorted(v, 50);
        } else {
            value = percentile_sorted(v, s.percentile);
        }
        out[s.name] = value;
    }
    return out;
}

std::vector<TraitRecord> compute_traits(const std::vector<PlantBox>& plants, const RasterGrid& grid,
                                        const std::vector<StatSpec>& stats)
{
    std::vector<TraitRecord> out(plants.size());
    parallel_for(plants.size(), [&](size_t i) {
        out[i] = {plants[i].plant_id, plants[i].box, zonal_stats(plants[i].ring(), grid, stats)};
    });
    const auto empty = std::count_if(out.begin(), out.end(), [](const TraitRecord& r) {
        auto it = r.stats.find("count");
        return it != r.stats.end() ? *it->second == 0 : std::all_of(r.stats.begin(), r.stats.end(), [](const auto& kv) {
            return !kv.second.has_value();
        });
    });
    if (empty > 0)
        spdlog::warn("traits: {} of {} plants cover no valid raster cell; their statistics are null", empty,
                     out.size());
    return out;
}

std::vector<formats::Polygon> trait_polygons(const std::vector<TraitRecord>& records)
{
    std::vector<formats::Polygon> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        auto poly = formats::rectangle_polygon(r.plant_id, r.box.min_x, r.box.min_y, r.box.max_x, r.box.max_y);
        poly.fields = r.stats;
        out.push_back(std::move(poly));
    }
    return out;
}

void write_traits_csv(const std::vector<TraitRecord>& records, const std::vector<std::string>& stat_names,
                      const std::string& path)
{
    formats::CsvRow header{"plant_id", "min_e", "min_n", "max_e", "max_n"};
    header.insert(header.end(), stat_names.begin(), stat_names.end());
    std::string text = formats::csv_line(header) + "\n";
    for (const auto& r : records) {
        formats::CsvRow row{std::to_string(r.plant_id), format_fixed(r.box.min_x, 4), format_fixed(r.box.min_y, 4),
                            format_fixed(r.box.max_x, 4), format_fixed(r.box.max_y, 4)};
        for (const auto& name : stat_names) {
            auto it = r.stats.find(name);
            row.push_back(it != r.stats.end() && it->second ? format_shortest(*it->second) : "");
        }
        text += formats::csv_line(row) + "\n";
    }
    write_text_file(path, text);
}

std::pair<std::vector<TraitRecord>, std::vector<std::string>> read_traits_csv(const std::string& path)
{
    const auto table = formats::CsvTable::read(path);
    std::vector<std::string> names;
    for (const auto& col : table.header())
        if (col != "plant_id" && col != "min_e" && col != "min_n" && col != "max_e" && col != "max_n")
            names.push_back(col);
    std::vector<TraitRecord> out;
    for (size_t i = 0; i < table.size(); ++i) {
        TraitRecord r;
        try {
            r.plant_id = parse_int(table.get(i, "plant_id"));
        } catch (const ParseError&) {
            throw ParseError("traits CSV " + path + ": bad plant_id", static_cast<int>(table.line_of(i)));
        }
        r.box = {table.number(i, "min_e"), table.number(i, "min_n"), table.number(i, "max_e"),
                 table.number(i, "max_n")};
        for (const auto& name : names) {
            const auto& cell = table.get(i, name);
            r.stats[name] = cell.empty() ? std::nullopt : std::optional<double>(table.number(i, name));
        }
        out.push_back(std::move(r));
    }
    return {std::move(out), names};
}

double pearson_r(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size())
        throw InvalidArgument("pearson_r: samples differ in length");
    if (x.size() < 2)
        throw InvalidArgument("pearson_r: need at least two pairs");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0 || syy == 0)
        throw InvalidArgument("pearson_r: constant sample");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double kolmogorov_sf(double lambda)
{
    if (!(lambda > 0))
        return 1.0;
    if (lambda < 0.3) {
        // The alternating series loses monotonicity to truncation error near
        // 1; the equivalent theta-function form converges fast here.
        const double pi = 3.14159265358979323846;
        double cdf = 0;
        for (int k = 1; k < 8; ++k)
            cdf += std::exp(-(2 * k - 1) * (2 * k - 1) * pi * pi / (8 * lambda * lambda));
        return std::clamp(1 - std::sqrt(2 * pi) / lambda * cdf, 0.0, 1.0);
    }
    double sum = 0;
    for (int k = 1;; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += (k % 2 == 1 ? term : -term);
        if (term < 1e-12)
            break;
    }
    return std::clamp(2 * sum, 0.0, 1.0);
}

KsResult ks_2samp(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.empty() || y.empty())
        throw InvalidArgument("ks_2samp: empty sample");
    auto a = x, b = y;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (std::isnan(a.back()) || std::isnan(b.back()) || std::isnan(a.front()) || std::isnan(b.front()))
        throw InvalidArgument("ks_2samp: NaN in sample");
    // Track |i m - j n| in integers so D is exact up to the final division.
    const int64_t n = static_cast<int64_t>(a.size()), m = static_cast<int64_t>(b.size());
    int64_t i = 0, j = 0, best = 0;
    while (i < n && j < m) {
        const double v = std::min(a[i], b[j]);
        while (i < n && a[i] == v)
            ++i;
        while (j < m && b[j] == v)
            ++j;
        best = std::max(best, std::abs(i * m - j * n));
    }
    KsResult r;
    r.d = static_cast<double>(best) / static_cast<double>(n * m);
    const double en = std::sqrt(static_cast<double>(n * m) / static_cast<double>(n + m));
    r.p = kolmogorov_sf(r.d * en);
    return r;
}

nlohmann::json AgreementReport::to_json() const
{
    nlohmann::json j;
    j["iou_floor"] = iou_floor;
    j["pairs"] = pairs.size();
    j["unpaired_pred"] = unpaired_pred;
    j["unpaired_manual"] = unpaired_manual;
    j["mean_iou"] = mean_iou;
    j["iou_histogram"] = iou_histogram;
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    j["traits"] = nlohmann::json::object();
    for (const auto& t : traits) {
        j["traits"][t.name] = {{"n", t.n},
                               {"r", opt(t.r)},
                               {"ks_d", t.ks ? nlohmann::json(t.ks->d) : nlohmann::json(nullptr)},
                               {"ks_p", t.ks ? nlohmann::json(t.ks->p) : nlohmann::json(nullptr)},
                               {"mean_abs_diff", opt(t.mean_abs_diff)}};
    }
    return j;
}

AgreementReport agreement_report(const std::vector<TraitRecord>& pred, const std::vector<TraitRecord>& manual,
                                 double iou_floor)
{
    if (!(iou_floor > 0 && iou_floor <= 1))
        throw InvalidArgument("IoU floor must be in (0, 1]");
    AgreementReport rep;
    rep.iou_floor = iou_floor;

    std::vector<size_t> by_x(manual.size());
    std::iota(by_x.begin(), by_x.end(), 0);
    std::sort(by_x.begin(), by_x.end(), [&](size_t a, size_t b) { return manual[a].box.min_x < manual[b].box.min_x; });
    std::vector<double> min_xs;
    for (size_t k : by_x)
        min_xs.push_back(manual[k].box.min_x);

    std::vector<std::tuple<double, size_t, size_t>> cand;  // (iou, pred, manual)
    for (size_t p = 0; p < pred.size(); ++p) {
        const auto end = std::lower_bound(min_xs.begin(), min_xs.end(), pred[p].box.max_x);
        for (size_t k = 0; k < static_cast<size_t>(end - min_xs.begin()); ++k) {
            const size_t q = by_x[k];
            if (manual[q].box.max_x <= pred[p].box.min_x)
                continue;
            const double v = world_iou(pred[p].box, manual[q].box);
            if (v >= iou_floor)
                cand.emplace_back(v, p, q);
        }
    }
    std::sort(cand.begin(), cand.end(), [&](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b))
            return std::get<0>(a) > std::get<0>(b);
        const auto ka = std::pair{pred[std::get<1>(a)].plant_id, manual[std::get<2>(a)].plant_id};
        const auto kb = std::pair{pred[std::get<1>(b)].plant_id, manual[std::get<2>(b)].plant_id};
        return ka < kb;
    });
    std::vector<bool> used_p(pred.size()), used_m(manual.size());
    std::vector<std::pair<size_t, size_t>> idx;
    for (const auto& [v, p, q] : cand) {
        if (used_p[p] || used_m[q])
            continue;
        used_p[p] = used_m[q] = true;
        rep.pairs.push_back({pred[p].plant_id, manual[q].plant_id, v});
        idx.emplace_back(p, q);
        rep.iou_histogram[std::min(9, static_cast<int>(v * 10))] += 1;
        rep.mean_iou += v;
    }
    if (!rep.pairs.empty())
        rep.mean_iou /= static_cast<double>(rep.pairs.size());
    rep.unpaired_pred = static_cast<int>(pred.size() - rep.pairs.size());
    rep.unpaired_manual = static_cast<int>(manual.size() - rep.pairs.size());

    std::set<std::string> pn, mn;
    for (const auto& r : pred)
        for (const auto& kv : r.stats)
            pn.insert(kv.first);
    for (const auto& r : manual)
        for (const auto& kv : r.stats)
            mn.insert(kv.first);
    for (const auto& name : pn) {
        if (!mn.count(name))
            continue;
        TraitAgreement t;
        t.name = name;
        std::vector<double> xs, ys;
        for (const auto& [p, q] : idx) {
            auto a = pred[p].stats.find(name);
            auto b = manual[q].stats.find(name);
            if (a == pred[p].stats.end() || b == manual[q].stats.end() || !a->second || !b->second)
                continue;
            xs.push_back(*a->second);
            ys.push_back(*b->second);
        }
        t.n = static_cast<int>(xs.size());
        if (!xs.empty()) {
            t.ks = ks_2samp(xs, ys);
            double s = 0;
            for (size_t i = 0; i < xs.size(); ++i)
                s += std::abs(xs[i] - ys[i]);
            t.mean_abs_diff = s / static_cast<double>(xs.size());
            try {
                t.r = pearson_r(xs, ys);
            } catch (const InvalidArgument&) {
                spdlog::warn("agreement: correlation for '{}' is undefined (fewer than two pairs or no variance)", name);
            }
        }
        rep.traits.push_back(std::move(t));
    }
    return rep;
}

}  // namespace orthotrace
