#include "orthotrace/coverage.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include "orthotrace/error.hpp"
#include "orthotrace/formats/csv.hpp"
#include "orthotrace/parallel.hpp"

namespace orthotrace {

namespace {

double median(std::vector<double> v)
{
    if (v.empty())
        return 0;
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double dot(const Eigen::Vector2d& axis, const WorldXY& p)
{
    return axis.x() * p.x + axis.y() * p.y;
}

Interval projection(const Ring& ring, const Eigen::Vector2d& axis)
{
    Interval iv{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& p : ring) {
        const double d = dot(axis, p);
        iv.lo = std::min(iv.lo, d);
        iv.hi = std::max(iv.hi, d);
    }
    return iv;
}

}  // namespace

std::vector<Footprint> compute_footprints(const formats::Reconstruction& rec, const FrameOffset& offset,
                                          const RasterGrid* dsm, const FootprintOptions& opts,
                                          std::vector<std::string>* failed)
{
    std::optional<DsmSurface> surface;
    if (dsm)
        surface.emplace(*dsm);
    std::vector<std::optional<Footprint>> out(rec.shots.size());
    parallel_for(rec.shots.size(), [&](size_t i) {
        const ShotPose& shot = rec.shots[i];
        const CameraIntrinsics& cam = rec.camera_for(shot);
        const double w = cam.width, h = cam.height;
        const PixelXY corners[4] = {{-0.5, -0.5}, {w - 0.5, -0.5}, {w - 0.5, h - 0.5}, {-0.5, h - 0.5}};
        Footprint fp;
        fp.image_name = shot.image_name;
        const Eigen::Vector3d c = camera_center(shot, offset);
        fp.center = {c.x(), c.y()};
        for (const auto& px : corners) {
            const Ray r = pixel_to_ray(cam, shot, px, offset);
            if (surface) {
                const auto hit = intersect_ray_dsm(r, surface->full(), opts.intersect);
                if (hit.ok())
                    fp.polygon.push_back({hit.point.x(), hit.point.y()});
            } else if (r.dir.z() < 0 && r.origin.z() > opts.ground_z) {
                const double t = (opts.ground_z - r.origin.z()) / r.dir.z();
                fp.polygon.push_back({r.origin.x() + t * r.dir.x(), r.origin.y() + t * r.dir.y()});
            }
        }
        fp.partial = fp.polygon.size() < 4;
        if (fp.polygon.size() >= 3 && fp.area() > 0)
            out[i] = std::move(fp);
    });
    std::vector<Footprint> result;
    for (size_t i = 0; i < out.size(); ++i) {
        if (out[i]) {
            result.push_back(std::move(*out[i]));
        } else {
            spdlog::warn("image '{}': fewer than three footprint corners reach the ground; skipped",
                         rec.shots[i].image_name);
            if (failed)
                failed->push_back(rec.shots[i].image_name);
        }
    }
    return result;
}

FlightAxes flight_axes(const std::vector<Footprint>& footprints)
{
    FlightAxes axes;
    if (footprints.size() < 2)
        return axes;
    std::vector<std::pair<double, double>> pts;
    for (const auto& f : footprints)
        pts.emplace_back(f.center.x, f.center.y);
    std::sort(pts.begin(), pts.end());
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& [x, y] : pts)
        mean += Eigen::Vector2d(x, y);
    mean /= static_cast<double>(pts.size());
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& [x, y] : pts) {
        const Eigen::Vector2d d = Eigen::Vector2d(x, y) - mean;
        cov += d * d.transpose();
    }
    if (cov.trace() <= 0)
        return axes;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
    Eigen::Vector2d a = eig.eigenvectors().col(1).normalized();
    if (a.x() < -1e-12 || (std::abs(a.x()) <= 1e-12 && a.y() < 0))
        a = -a;
    axes.along = a;
    axes.across = {-a.y(), a.x()};
    return axes;
}

FlightAxes cluster_flight_lines(std::vector<Footprint>& footprints, double line_gap, std::optional<FlightAxes> axes)
{
    const FlightAxes ax = axes ? *axes : flight_axes(footprints);
    for (auto& f : footprints) {
        f.along = dot(ax.along, f.center);
        f.across = dot(ax.across, f.center);
    }
    if (line_gap <= 0) {
        std::vector<double> nn;
        for (size_t i = 0; i < footprints.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (size_t j = 0; j < footprints.size(); ++j) {
                if (i == j)
                    continue;
                const double d = std::hypot(footprints[i].center.x - footprints[j].center.x,
                                            footprints[i].center.y - footprints[j].center.y);
                if (d > 0)
                    best = std::min(best, d);
            }
            if (std::isfinite(best))
                nn.push_back(best);
        }
        line_gap = nn.empty() ? 1.0 : 0.5 * median(nn);
    }
    std::vector<size_t> order(footprints.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        const auto& fa = footprints[a];
        const auto& fb = footprints[b];
        return std::tie(fa.across, fa.along, fa.image_name) < std::tie(fb.across, fb.along, fb.image_name);
    });
    int line = 0;
    for (size_t k = 0; k < order.size(); ++k) {
        if (k > 0 && footprints[order[k]].across - footprints[order[k - 1]].across > line_gap)
            ++line;
        footprints[order[k]].line_id = line;
    }
    return ax;
}

IntervalCover greedy_interval_cover(const std::vector<Interval>& items, double target_lo, double target_hi,
                                    double min_overlap)
{
    IntervalCover cover;
    if (items.empty()) {
        cover.complete = false;
        return cover;
    }
    const double scale = std::max({1.0, std::abs(target_lo), std::abs(target_hi)});
    const double eps = 1e-9 * scale;
    std::vector<bool> used(items.size(), false);

    // Restart after a gap: the earliest-starting interval that extends the
    // reach, farthest reach on ties.
    auto jump = [&](double reach) -> std::optional<size_t> {
        std::optional<size_t> best;
        for (size_t i = 0; i < items.size(); ++i) {
            if (used[i] || !(items[i].hi > reach + eps))
                continue;
            if (!best || items[i].lo < items[*best].lo
                || (items[i].lo == items[*best].lo && items[i].hi > items[*best].hi))
                best = i;
        }
        return best;
    };

    std::optional<size_t> first;
    for (size_t i = 0; i < items.size(); ++i)
        if (items[i].lo <= target_lo + eps && (!first || items[i].hi > items[*first].hi))
            first = i;
    if (!first) {
        cover.complete = false;
        first = jump(-std::numeric_limits<double>::infinity());
    }
    used[*first] = true;
    cover.chosen.push_back(*first);
    double reach = items[*first].hi;

    while (reach < target_hi - eps) {
        std::optional<size_t> best;
        for (size_t i = 0; i < items.size(); ++i) {
            const Interval& c = items[i];
            if (used[i] || !(c.hi > reach + eps))
                continue;
            if (c.lo > reach - min_overlap * c.length() + eps)
                continue;
            if (!best || c.hi > items[*best].hi)
                best = i;
        }
        if (!best) {
            cover.complete = false;
            best = jump(reach);
            if (!best)
                break;
        }
        used[*best] = true;
        cover.chosen.push_back(*best);
        reach = items[*best].hi;
    }
    return cover;
}

namespace {

struct CellGrid {
    double x0 = 0, y0 = 0, cell = 1;  // x0, y0: lower-left corner
    int nx = 0, ny = 0;
    std::vector<char> in_aoi;
    size_t aoi_cells = 0;

    CellGrid(const Ring& aoi, double cell_size) : cell(cell_size)
    {
        const Bounds2 b = ring_bounds(aoi);
        x0 = b.min_x;
        y0 = b.min_y;
        nx = std::max(1, static_cast<int>(std::ceil((b.max_x - b.min_x) / cell - 1e-9)));
        ny = std::max(1, static_cast<int>(std::ceil((b.max_y - b.min_y) / cell - 1e-9)));
        in_aoi.assign(static_cast<size_t>(nx) * ny, 0);
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i)
                if (point_in_ring(aoi, cx(i), cy(j))) {
                    in_aoi[idx(i, j)] = 1;
                    ++aoi_cells;
                }
    }
    double cx(int i) const { return x0 + (i + 0.5) * cell; }
    double cy(int j) const { return y0 + (j + 0.5) * cell; }
    size_t idx(int i, int j) const { return static_cast<size_t>(j) * nx + i; }

    // AOI cells whose centers fall inside the ring.
    template <class Fn>
    void for_cells_in(const Ring& ring, Fn&& fn) const
    {
        const Bounds2 b = ring_bounds(ring);
        const int i0 = std::max(0, static_cast<int>(std::floor((b.min_x - x0) / cell - 0.5)));
        const int i1 = std::min(nx - 1, static_cast<int>(std::ceil((b.max_x - x0) / cell - 0.5)));
        const int j0 = std::max(0, static_cast<int>(std::floor((b.min_y - y0) / cell - 0.5)));
        const int j1 = std::min(ny - 1, static_cast<int>(std::ceil((b.max_y - y0) / cell - 0.5)));
        for (int j = j0; j <= j1; ++j)
            for (int i = i0; i <= i1; ++i)
                if (in_aoi[idx(i, j)] && point_in_ring(ring, cx(i), cy(j)))
                    fn(idx(i, j));
    }
};

std::vector<CoverageGap> find_gaps(const CellGrid& g, const std::vector<char>& covered)
{
    std::vector<CoverageGap> gaps;
    std::vector<char> seen(covered.size(), 0);
    std::vector<std::pair<int, int>> stack;
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const size_t k = g.idx(i, j);
            if (!g.in_aoi[k] || covered[k] || seen[k])
                continue;
            int i0 = i, i1 = i, j0 = j, j1 = j;
            size_t count = 0;
            seen[k] = 1;
            stack.push_back({i, j});
            while (!stack.empty()) {
                const auto [ci, cj] = stack.back();
                stack.pop_back();
                ++count;
                i0 = std::min(i0, ci);
                i1 = std::max(i1, ci);
                j0 = std::min(j0, cj);
                j1 = std::max(j1, cj);
                const std::pair<int, int> nb[4] = {{ci - 1, cj}, {ci + 1, cj}, {ci, cj - 1}, {ci, cj + 1}};
                for (const auto& [ni, nj] : nb) {
                    if (ni < 0 || nj < 0 || ni >= g.nx || nj >= g.ny)
                        continue;
                    const size_t nk = g.idx(ni, nj);
                    if (g.in_aoi[nk] && !covered[nk] && !seen[nk]) {
                        seen[nk] = 1;
                        stack.push_back({ni, nj});
                    }
                }
            }
            const double ax = g.x0 + i0 * g.cell, bx = g.x0 + (i1 + 1) * g.cell;
            const double ay = g.y0 + j0 * g.cell, by = g.y0 + (j1 + 1) * g.cell;
            gaps.push_back({static_cast<double>(count) * g.cell * g.cell, {{ax, ay}, {ax, by}, {bx, by}, {bx, ay}}});
        }
    return gaps;
}

double fraction_uncovered(const CellGrid& g, const std::vector<char>& covered)
{
    if (g.aoi_cells == 0)
        return 0;
    size_t n = 0;
    for (size_t k = 0; k < covered.size(); ++k)
        n += g.in_aoi[k] && !covered[k];
    return static_cast<double>(n) / static_cast<double>(g.aoi_cells);
}

void check_aoi(const Ring& aoi)
{
    if (aoi.size() < 3 || !(ring_area(aoi) > 0))
        throw InvalidArgument("AOI must be a polygon with positive area");
}

}  // namespace

UncoveredArea uncovered_area(const std::vector<const Footprint*>& selected, const Ring& aoi, double cell_size)
{
    check_aoi(aoi);
    if (!(cell_size > 0))
        throw InvalidArgument("cell size must be positive");
    const CellGrid g(aoi, cell_size);
    std::vector<char> covered(g.in_aoi.size(), 0);
    for (const auto* f : selected)
        g.for_cells_in(f->polygon, [&](size_t k) { covered[k] = 1; });
    return {fraction_uncovered(g, covered), find_gaps(g, covered)};
}

Ring default_aoi(const std::vector<Footprint>& footprints, const FlightAxes& axes)
{
    if (footprints.empty())
        throw InvalidArgument("no footprints to derive an AOI from");
    Interval a{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    Interval c = a;
    std::vector<double> ext_a, ext_c;
    for (const auto& f : footprints) {
        const Interval fa = projection(f.polygon, axes.along);
        const Interval fc = projection(f.polygon, axes.across);
        a = {std::min(a.lo, fa.lo), std::max(a.hi, fa.hi)};
        c = {std::min(c.lo, fc.lo), std::max(c.hi, fc.hi)};
        ext_a.push_back(fa.length());
        ext_c.push_back(fc.length());
    }
    const double ma = 0.5 * median(ext_a), mc = 0.5 * median(ext_c);
    if (a.length() > 2 * ma)
        a = {a.lo + ma, a.hi - ma};
    if (c.length() > 2 * mc)
        c = {c.lo + mc, c.hi - mc};
    auto corner = [&](double s, double t) {
        return WorldXY{s * axes.along.x() + t * axes.across.x(), s * axes.along.y() + t * axes.across.y()};
    };
    return {corner(a.lo, c.lo), corner(a.hi, c.lo), corner(a.hi, c.hi), corner(a.lo, c.hi)};
}

CoverageReport select_minimum_cover(const std::vector<Footprint>& footprints, const Ring& aoi,
                                    const CoverOptions& opts, const FlightAxes& axes)
{
    if (footprints.empty())
        throw InvalidArgument("select_minimum_cover: empty footprint list");
    for (double t : {opts.min_h_overlap, opts.min_v_overlap, opts.max_uncovered})
        if (!(t >= 0 && t < 1))
            throw InvalidArgument("select_minimum_cover: thresholds must lie in [0, 1)");
    check_aoi(aoi);
    for (const auto& f : footprints)
        if (f.line_id < 0)
            throw InvalidArgument("footprint '" + f.image_name + "' has no flight line; cluster lines first");

    std::vector<Interval> fa(footprints.size()), fc(footprints.size());
    std::vector<double> widths;
    for (size_t i = 0; i < footprints.size(); ++i) {
        fa[i] = projection(footprints[i].polygon, axes.along);
        fc[i] = projection(footprints[i].polygon, axes.across);
        widths.push_back(fc[i].length());
    }
    CoverageReport rep;
    rep.cell_size = opts.cell_size > 0 ? opts.cell_size : median(widths) / 20;
    const Bounds2 ab = ring_bounds(aoi);
    // Keep the check grid to a few million cells.
    const double min_cell = std::sqrt((ab.max_x - ab.min_x) * (ab.max_y - ab.min_y) / 4e6);
    rep.cell_size = std::max(rep.cell_size, min_cell);
    const CellGrid grid(aoi, rep.cell_size);

    std::vector<std::vector<size_t>> cells(footprints.size());
    parallel_for(footprints.size(), [&](size_t i) {
        grid.for_cells_in(footprints[i].polygon, [&](size_t k) { cells[i].push_back(k); });
    });
    if (std::all_of(cells.begin(), cells.end(), [](const auto& c) { return c.empty(); }))
        throw InvalidArgument("select_minimum_cover: AOI is disjoint from all footprints");

    const Interval aoi_a = projection(aoi, axes.along);
    const Interval aoi_c = projection(aoi, axes.across);

    std::map<int, std::vector<size_t>> lines;
    for (size_t i = 0; i < footprints.size(); ++i)
        lines[footprints[i].line_id].push_back(i);
    rep.lines = static_cast<int>(lines.size());

    // Across-track strip each line covers along its whole length.
    std::vector<int> line_ids;
    std::vector<Interval> strips;
    for (const auto& [id, members] : lines) {
        Interval inter{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
        Interval uni{inter.hi, inter.lo};
        for (size_t i : members) {
            inter = {std::max(inter.lo, fc[i].lo), std::min(inter.hi, fc[i].hi)};
            uni = {std::min(uni.lo, fc[i].lo), std::max(uni.hi, fc[i].hi)};
        }
        line_ids.push_back(id);
        strips.push_back(inter.hi > inter.lo ? inter : uni);
    }
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : strips) {
        lo = std::min(lo, s.lo);
        hi = std::max(hi, s.hi);
    }
    const auto line_cover = greedy_interval_cover(strips, std::max(aoi_c.lo, lo), std::min(aoi_c.hi, hi),
                                                  opts.min_v_overlap);
    std::vector<char> chosen(footprints.size(), 0);
    for (size_t li : line_cover.chosen) {
        const int id = line_ids[li];
        rep.retained_lines.push_back(id);
        auto members = lines[id];
        std::sort(members.begin(), members.end(), [&](size_t a, size_t b) {
            return std::tie(footprints[a].along, footprints[a].image_name)
                   < std::tie(footprints[b].along, footprints[b].image_name);
        });
        std::vector<Interval> items;
        double llo = std::numeric_limits<double>::infinity(), lhi = -llo;
        for (size_t i : members) {
            items.push_back(fa[i]);
            llo = std::min(llo, fa[i].lo);
            lhi = std::max(lhi, fa[i].hi);
        }
        const auto cov = greedy_interval_cover(items, std::max(aoi_a.lo, llo), std::min(aoi_a.hi, lhi),
                                               opts.min_h_overlap);
        for (size_t k : cov.chosen)
            chosen[members[k]] = 1;
    }
    std::sort(rep.retained_lines.begin(), rep.retained_lines.end());

    std::vector<char> covered(grid.in_aoi.size(), 0);
    for (size_t i = 0; i < footprints.size(); ++i)
        if (chosen[i])
            for (size_t k : cells[i])
                covered[k] = 1;
    rep.uncovered_fraction = fraction_uncovered(grid, covered);

    // Fill remaining holes with the skipped image that covers the most of
    // them.
    auto rank = [&](size_t a, size_t b) {
        const auto& x = footprints[a];
        const auto& y = footprints[b];
        return std::tie(x.line_id, x.along, x.image_name) < std::tie(y.line_id, y.along, y.image_name);
    };
    while (rep.uncovered_fraction > opts.max_uncovered) {
        std::optional<size_t> best;
        size_t best_gain = 0;
        for (size_t i = 0; i < footprints.size(); ++i) {
            if (chosen[i])
                continue;
            size_t gain = 0;
            for (size_t k : cells[i])
                gain += !covered[k];
            if (gain > best_gain || (gain > 0 && gain == best_gain && rank(i, *best))) {
                best = i;
                best_gain = gain;
            }
        }
        if (!best)
            break;
        chosen[*best] = 1;
        ++rep.readded;
        for (size_t k : cells[*best])
            covered[k] = 1;
        rep.uncovered_fraction = fraction_uncovered(grid, covered);
    }
    rep.best_effort = rep.uncovered_fraction > opts.max_uncovered;
    if (rep.best_effort)
        spdlog::warn("coverage: {:.4f} of the AOI stays uncovered (limit {:.4f}); selection is best effort",
                     rep.uncovered_fraction, opts.max_uncovered);
    rep.gaps = find_gaps(grid, covered);

    std::vector<size_t> sel;
    for (size_t i = 0; i < footprints.size(); ++i)
        if (chosen[i])
            sel.push_back(i);
    std::sort(sel.begin(), sel.end(), rank);
    for (size_t i : sel)
        rep.selected.push_back(footprints[i].image_name);
    return rep;
}

nlohmann::json CoverageReport::to_json() const
{
    nlohmann::json g = nlohmann::json::array();
    for (const auto& gap : gaps) {
        nlohmann::json ring = nlohmann::json::array();
        for (const auto& p : gap.ring)
            ring.push_back({p.x, p.y});
        g.push_back({{"area", gap.area}, {"ring", ring}});
    }
    return {{"selected_count", selected.size()},
            {"selected", selected},
            {"uncovered_fraction", uncovered_fraction},
            {"best_effort", best_effort},
            {"cell_size", cell_size},
            {"lines", lines},
            {"retained_lines", retained_lines},
            {"readded", readded},
            {"gaps", g}};
}

CoverageReport CoverageReport::from_json(const nlohmann::json& j)
{
    try {
        CoverageReport r;
        r.selected = j.at("selected").get<std::vector<std::string>>();
        if (j.at("selected_count").get<size_t>() != r.selected.size())
            throw ParseError("coverage report: selected_count does not match the selected list");
        r.uncovered_fraction = j.at("uncovered_fraction").get<double>();
        r.best_effort = j.at("best_effort").get<bool>();
        r.cell_size = j.at("cell_size").get<double>();
        r.lines = j.at("lines").get<int>();
        r.retained_lines = j.at("retained_lines").get<std::vector<int>>();
        r.readded = j.value("readded", 0);
        for (const auto& g : j.at("gaps")) {
            CoverageGap gap;
            gap.area = g.at("area").get<double>();
            for (const auto& p : g.at("ring"))
                gap.ring.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
            r.gaps.push_back(std::move(gap));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("coverage report: ") + e.what());
    }
}

Ring read_aoi_csv(const std::string& path)
{
    const auto table = formats::CsvTable::read(path);
    const bool xy = table.has("x");
    Ring ring;
    for (size_t i = 0; i < table.size(); ++i)
        ring.push_back({table.number(i, xy ? "x" : "easting"), table.number(i, xy ? "y" : "northing")});
    if (ring.size() > 1 && ring.front().x == ring.back().x && ring.front().y == ring.back().y)
        ring.pop_back();
    if (ring.size() < 3)
        throw ParseError("AOI " + path + ": need at least three vertices");
    return ring;
}

}  // namespace orthotrace
