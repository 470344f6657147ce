#include "orthotrace/raster.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "geotiff.hpp"
#include "orthotrace/error.hpp"
#include "orthotrace/number_format.hpp"

namespace orthotrace {

namespace fs = std::filesystem;

bool RasterGrid::is_valid_value(double v) const
{
    if (std::isnan(v))
        return false;
    return !(nodata && !std::isnan(*nodata) && v == *nodata);
}

bool RasterGrid::is_valid(int col, int row) const
{
    return is_valid_value(at(col, row));
}

void RasterGrid::validate() const
{
    if (width <= 0 || height <= 0)
        throw InvalidArgument("raster dimensions must be positive");
    if (values.size() != static_cast<size_t>(width) * static_cast<size_t>(height))
        throw InvalidArgument("raster value count does not match width*height");
    if (!gt.invertible())
        throw InvalidArgument("raster geotransform is singular");
}

double RasterGrid::cell_size() const
{
    return std::min(std::hypot(gt.pixel_w, gt.rot_y), std::hypot(gt.rot_x, gt.pixel_h));
}

RasterGrid::Bounds RasterGrid::bounds() const
{
    Bounds b{INFINITY, INFINITY, -INFINITY, -INFINITY};
    for (double c : {-0.5, width - 0.5})
        for (double r : {-0.5, height - 0.5}) {
            auto w = pixel_to_world(gt, c, r);
            b.min_x = std::min(b.min_x, w.x);
            b.max_x = std::max(b.max_x, w.x);
            b.min_y = std::min(b.min_y, w.y);
            b.max_y = std::max(b.max_y, w.y);
        }
    return b;
}

std::optional<std::pair<double, double>> RasterGrid::value_range() const
{
    std::optional<std::pair<double, double>> r;
    for (double v : values) {
        if (!is_valid_value(v))
            continue;
        if (!r)
            r.emplace(v, v);
        else
            r = {std::min(r->first, v), std::max(r->second, v)};
    }
    return r;
}

namespace {

// Interpolation weights along one axis; `i1 == i0` when the second cell has
// zero weight (exact center hit or the clamped outer half cell).
struct AxisTap {
    int i0, i1;
    double frac;
};

AxisTap axis_tap(double p, int n)
{
    double f = std::floor(p);
    int i0 = static_cast<int>(f);
    double frac = p - f;
    if (i0 < 0)
        return {0, 0, 0.0};
    if (i0 >= n - 1)
        return {n - 1, n - 1, 0.0};
    if (frac == 0.0)
        return {i0, i0, 0.0};
    return {i0, i0 + 1, frac};
}

Sample sample_pixel(const RasterGrid& g, PixelXY px, Interpolation mode)
{
    if (!(px.col >= -0.5 && px.col <= g.width - 0.5 && px.row >= -0.5 && px.row <= g.height - 0.5))
        return {SampleStatus::OutOfBounds, 0};

    if (mode == Interpolation::Nearest) {
        int c = std::clamp(static_cast<int>(std::floor(px.col + 0.5)), 0, g.width - 1);
        int r = std::clamp(static_cast<int>(std::floor(px.row + 0.5)), 0, g.height - 1);
        if (!g.is_valid(c, r))
            return {SampleStatus::Nodata, 0};
        return {SampleStatus::Ok, g.at(c, r)};
    }

    const AxisTap tc = axis_tap(px.col, g.width);
    const AxisTap tr = axis_tap(px.row, g.height);
    const double v00 = g.at(tc.i0, tr.i0);
    const double v01 = g.at(tc.i1, tr.i0);
    const double v10 = g.at(tc.i0, tr.i1);
    const double v11 = g.at(tc.i1, tr.i1);
    if (!g.is_valid_value(v00) || !g.is_valid_value(v01) || !g.is_valid_value(v10) || !g.is_valid_value(v11))
        return {SampleStatus::Nodata, 0};
    const double top = v00 + tc.frac * (v01 - v00);
    const double bottom = v10 + tc.frac * (v11 - v10);
    return {SampleStatus::Ok, top + tr.frac * (bottom - top)};
}

}  // namespace

Sample sample(const RasterGrid& g, double x, double y, Interpolation mode)
{
    return sample_pixel(g, world_to_pixel(g.gt, x, y), mode);
}

// --- RasterWindow -------------------------------------------------------------

RasterWindow::RasterWindow(const RasterGrid& grid, int col0, int row0, int col1, int row1)
    : grid_(&grid),
      col0_(std::max(col0, 0)),
      row0_(std::max(row0, 0)),
      col1_(std::min(col1, grid.width - 1)),
      row1_(std::min(row1, grid.height - 1))
{
    for (int r = row0_; r <= row1_; ++r)
        for (int c = col0_; c <= col1_; ++c) {
            const double v = grid.at(c, r);
            if (!grid.is_valid_value(v))
                continue;
            if (!range_)
                range_.emplace(v, v);
            else
                range_ = {std::min(range_->first, v), std::max(range_->second, v)};
        }
}

RasterWindow::RasterWindow(const RasterGrid& grid) : RasterWindow(grid, 0, 0, grid.width - 1, grid.height - 1) {}

RasterWindow RasterWindow::covering(const RasterGrid& grid, double min_x, double min_y, double max_x, double max_y)
{
    double cmin = INFINITY, cmax = -INFINITY, rmin = INFINITY, rmax = -INFINITY;
    for (double x : {min_x, max_x})
        for (double y : {min_y, max_y}) {
            auto p = world_to_pixel(grid.gt, x, y);
            cmin = std::min(cmin, p.col);
            cmax = std::max(cmax, p.col);
            rmin = std::min(rmin, p.row);
            rmax = std::max(rmax, p.row);
        }
    auto clampi = [](double v) { return static_cast<int>(std::clamp(v, -1e9, 1e9)); };
    return RasterWindow(grid, clampi(std::floor(cmin)) - 1, clampi(std::floor(rmin)) - 1,
                        clampi(std::ceil(cmax)) + 1, clampi(std::ceil(rmax)) + 1);
}

Sample RasterWindow::sample(double x, double y, Interpolation mode) const
{
    if (empty())
        return {SampleStatus::OutOfBounds, 0};
    const PixelXY px = world_to_pixel(grid_->gt, x, y);
    if (!contains_pixel(px))
        return {SampleStatus::OutOfBounds, 0};
    return sample_pixel(*grid_, px, mode);
}

bool RasterWindow::contains_pixel(const PixelXY& px) const
{
    // Interior window edges stop at the outermost cell centers so that every
    // in-window sample reads window cells only; true grid edges keep the
    // half-cell apron.
    const double c0 = col0_ == 0 ? -0.5 : col0_;
    const double r0 = row0_ == 0 ? -0.5 : row0_;
    const double c1 = col1_ == grid_->width - 1 ? col1_ + 0.5 : col1_;
    const double r1 = row1_ == grid_->height - 1 ? row1_ + 0.5 : row1_;
    return !empty() && px.col >= c0 && px.col <= c1 && px.row >= r0 && px.row <= r1;
}

bool RasterWindow::contains(double x, double y) const
{
    return contains_pixel(world_to_pixel(grid_->gt, x, y));
}

// --- ESRI ASCII grid ------------------------------------------------------------

std::string crs_sidecar_path(const std::string& raster_path)
{
    return fs::path(raster_path).replace_extension(".prj").string();
}

namespace {

std::string lower(std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::optional<Crs> read_crs_sidecar(const std::string& raster_path)
{
    const auto side = crs_sidecar_path(raster_path);
    std::ifstream in(side);
    if (!in)
        return std::nullopt;
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    if (text.find_first_not_of(" \t\r\n") == std::string::npos)
        return std::nullopt;
    try {
        return Crs::parse(text);
    } catch (const ParseError& e) {
        throw ParseError("CRS sidecar " + side + ": " + e.what());
    }
}

RasterGrid read_ascii_grid(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error("cannot open raster " + path);

    RasterGrid g;
    std::optional<long long> ncols, nrows;
    std::optional<double> xll, yll, cellsize;
    bool x_center = false, y_center = false;

    std::string line;
    int lineno = 0;
    std::streampos data_start = in.tellg();
    while (true) {
        data_start = in.tellg();
        if (!std::getline(in, line))
            break;
        ++lineno;
        std::istringstream ls(line);
        std::string key, val, extra;
        if (!(ls >> key))
            continue;
        if (!std::isalpha(static_cast<unsigned char>(key[0]))) {
            --lineno;
            break;
        }
        if (!(ls >> val) || (ls >> extra))
            throw ParseError("ASCII grid " + path + ": malformed header line '" + line + "'", lineno);
        const auto k = lower(key);
        try {
            if (k == "ncols")
                ncols = parse_int(val);
            else if (k == "nrows")
                nrows = parse_int(val);
            else if (k == "xllcorner" || k == "xllcenter")
                xll = parse_double(val), x_center = (k == "xllcenter");
            else if (k == "yllcorner" || k == "yllcenter")
                yll = parse_double(val), y_center = (k == "yllcenter");
            else if (k == "cellsize")
                cellsize = parse_double(val);
            else if (k == "nodata_value")
                g.nodata = parse_double(val);
            else
                throw ParseError("ASCII grid " + path + ": unknown header key '" + key + "'", lineno);
        } catch (const ParseError& e) {
            if (std::string(e.what()).find("ASCII grid") != std::string::npos)
                throw;
            throw ParseError("ASCII grid " + path + ": bad value for '" + key + "'", lineno);
        }
    }
    if (!ncols || !nrows || !xll || !yll || !cellsize)
        throw ParseError("ASCII grid " + path + ": header requires ncols, nrows, xllcorner, yllcorner, cellsize");
    if (*ncols <= 0 || *nrows <= 0 || *ncols > (1 << 24) || *nrows > (1 << 24))
        throw ParseError("ASCII grid " + path + ": invalid dimensions");
    if (!(*cellsize > 0))
        throw ParseError("ASCII grid " + path + ": cellsize must be positive");

    g.width = static_cast<int>(*ncols);
    g.height = static_cast<int>(*nrows);
    const double cs = *cellsize;
    g.gt.pixel_w = cs;
    g.gt.pixel_h = -cs;
    g.gt.origin_x = x_center ? *xll : *xll + cs / 2;
    const double bottom_center = y_center ? *yll : *yll + cs / 2;
    g.gt.origin_y = bottom_center + (g.height - 1) * cs;

    in.clear();
    in.seekg(data_start);
    g.values.reserve(static_cast<size_t>(g.width) * g.height);
    std::string tok;
    while (in >> tok) {
        try {
            g.values.push_back(parse_double(tok));
        } catch (const ParseError&) {
            throw ParseError("ASCII grid " + path + ": non-numeric cell value '" + tok + "'");
        }
    }
    if (g.values.size() != static_cast<size_t>(g.width) * g.height)
        throw ParseError("ASCII grid " + path + ": expected " + std::to_string(static_cast<size_t>(g.width) * g.height)
                         + " values, found " + std::to_string(g.values.size()));
    g.crs = read_crs_sidecar(path);
    return g;
}

}  // namespace

RasterGrid read_raster(const std::string& path)
{
    const auto ext = lower(fs::path(path).extension().string());
    if (ext == ".asc")
        return read_ascii_grid(path);
    if (ext == ".tif" || ext == ".tiff")
        return detail::read_geotiff(path);
    throw ParseError("unsupported raster format '" + ext + "' for " + path);
}

void write_raster(const RasterGrid& g, const std::string& path)
{
    g.validate();
    if (g.gt.rot_x != 0 || g.gt.rot_y != 0 || g.gt.pixel_w <= 0 || g.gt.pixel_h != -g.gt.pixel_w)
        throw InvalidArgument("ASCII grid output requires a north-up transform with square pixels");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot write raster " + path);
    const double cs = g.gt.pixel_w;
    out << "ncols " << g.width << '\n'
        << "nrows " << g.height << '\n'
        << "xllcorner " << format_shortest(g.gt.origin_x - cs / 2) << '\n'
        << "yllcorner " << format_shortest(g.gt.origin_y - (g.height - 1) * cs - cs / 2) << '\n'
        << "cellsize " << format_shortest(cs) << '\n';
    if (g.nodata)
        out << "NODATA_value " << format_shortest(*g.nodata) << '\n';
    for (int r = 0; r < g.height; ++r) {
        for (int c = 0; c < g.width; ++c) {
            double v = g.at(c, r);
            if (std::isnan(v) && g.nodata)
                v = *g.nodata;
            if (c)
                out << ' ';
            out << format_shortest(v);
        }
        out << '\n';
    }
    if (!out)
        throw Error("failed writing raster " + path);
    if (g.crs) {
        std::ofstream side(crs_sidecar_path(path), std::ios::binary);
        side << g.crs->to_string() << '\n';
    }
}

}  // namespace orthotrace
