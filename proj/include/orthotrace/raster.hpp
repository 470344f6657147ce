#pragma once

#include <optional>
#include <string>
#include <vector>

#include "orthotrace/geodesy.hpp"

namespace orthotrace {

enum class Interpolation { Bilinear, Nearest };

enum class SampleStatus { Ok, Nodata, OutOfBounds };

struct Sample {
    SampleStatus status = SampleStatus::OutOfBounds;
    double value = 0;

    bool ok() const { return status == SampleStatus::Ok; }
};

/// Single-band georeferenced grid. Values are row-major, row 0 northernmost
/// for north-up transforms. Immutable once loaded; sampling is thread-safe.
struct RasterGrid {
    int width = 0;
    int height = 0;
    AffineGeotransform gt;
    std::optional<Crs> crs;
    std::optional<double> nodata;
    std::vector<double> values;

    double at(int col, int row) const { return values[static_cast<size_t>(row) * width + col]; }
    double& at(int col, int row) { return values[static_cast<size_t>(row) * width + col]; }

    /// False for NaN cells and cells equal to the nodata value.
    bool is_valid(int col, int row) const;
    bool is_valid_value(double v) const;

    /// Throws InvalidArgument if dimensions, value count or transform are inconsistent.
    void validate() const;

    /// Nominal cell size: the smaller of the two pixel-axis lengths.
    double cell_size() const;

    /// World-space bounding box of the raster footprint (outer cell edges).
    struct Bounds {
        double min_x, min_y, max_x, max_y;
    };
    Bounds bounds() const;

    /// Minimum and maximum over valid cells, or nullopt when none are valid.
    std::optional<std::pair<double, double>> value_range() const;
};

/// Samples the grid at a world position. Positions inside the raster extent
/// (including the outer half cell, which extends the edge cells) are Ok or
/// Nodata; positions outside are OutOfBounds. Bilinear sampling interpolates
/// between the four surrounding cell centers; any contributing cell with a
/// nonzero weight that is invalid makes the sample Nodata.
Sample sample(const RasterGrid& g, double x, double y, Interpolation mode = Interpolation::Bilinear);
inline Sample sample_bilinear(const RasterGrid& g, double x, double y)
{
    return sample(g, x, y, Interpolation::Bilinear);
}

/// Rectangular cell window onto a parent grid. Sampling uses the parent's
/// arithmetic, so in-window samples are bit-identical to full-grid samples,
/// and every in-window sample lies within the window's value range.
class RasterWindow {
public:
    /// Inclusive cell ranges, clamped to the parent grid.
    RasterWindow(const RasterGrid& grid, int col0, int row0, int col1, int row1);
    explicit RasterWindow(const RasterGrid& grid);

    /// Window covering the world rectangle, grown by one cell on every side.
    static RasterWindow covering(const RasterGrid& grid, double min_x, double min_y, double max_x, double max_y);

    Sample sample(double x, double y, Interpolation mode = Interpolation::Bilinear) const;

    /// True where sample() is not OutOfBounds.
    bool contains(double x, double y) const;
    bool contains_pixel(const PixelXY& px) const;

    const RasterGrid& grid() const { return *grid_; }
    bool empty() const { return col1_ < col0_ || row1_ < row0_; }
    /// Valid-cell elevation range of the window.
    std::optional<std::pair<double, double>> value_range() const { return range_; }

private:
    const RasterGrid* grid_;
    int col0_, row0_, col1_, row1_;
    std::optional<std::pair<double, double>> range_;
};

/// Reads an ESRI ASCII grid (.asc) or a single-band uncompressed GeoTIFF
/// (.tif/.tiff). ASCII grids take their CRS from a sidecar with the same stem
/// and a .prj extension holding a single line such as "UTM 15 N" or WKT.
RasterGrid read_raster(const std::string& path);

/// Writes an ESRI ASCII grid plus the CRS sidecar when the grid has a CRS.
/// Requires a north-up transform with square pixels.
void write_raster(const RasterGrid& g, const std::string& path);

/// Sidecar path used for the CRS of an ASCII grid.
std::string crs_sidecar_path(const std::string& raster_path);

}  // namespace orthotrace
