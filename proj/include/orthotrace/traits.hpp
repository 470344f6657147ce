#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthotrace/formats/coco.hpp"
#include "orthotrace/formats/shapefile.hpp"
#include "orthotrace/polygon.hpp"
#include "orthotrace/projector.hpp"
#include "orthotrace/raster.hpp"

namespace orthotrace {

/// One plant footprint in world coordinates.
struct PlantBox {
    int64_t plant_id = 0;
    WorldBox box;

    Ring ring() const;
};

struct PlantBoxes {
    std::vector<PlantBox> plants;
    int skipped = 0;  // rows without an ok projection
};

/// Ok-status rows of a projection table, keyed by detection id.
PlantBoxes boxes_to_plants(const std::vector<ProjectionResult>& results);

/// Manual orthomosaic annotations (pixel edge coordinates) to world boxes
/// through the orthomosaic geotransform. Requires a north-up transform.
PlantBoxes ortho_annotations_to_plants(const formats::AnnotationSet& set, const AffineGeotransform& ortho);

std::vector<formats::Polygon> plant_polygons(const std::vector<PlantBox>& plants);

/// Cells whose center lies inside the ring, as (col, row) in row-major
/// order. Points on a rectangle's min edges count, points on its max edges
/// do not.
std::vector<std::pair<int, int>> rasterize_polygon(const Ring& ring, const RasterGrid& grid);

/// A requested statistic: mean, std, min, max, median, count or pXX.
struct StatSpec {
    std::string name;
    double percentile = 0;  // for pXX

    static StatSpec parse(const std::string& s);
};

std::vector<StatSpec> parse_stat_list(const std::string& comma_separated);

/// Linear-interpolation percentile of sorted values, q in [0, 100].
double percentile_sorted(const std::vector<double>& sorted, double q);

using StatValues = std::map<std::string, std::optional<double>>;

/// Statistics over the valid cells under the ring. With no valid cells every
/// statistic is null except count, which is 0.
StatValues zonal_stats(const Ring& ring, const RasterGrid& grid, const std::vector<StatSpec>& stats);

struct TraitRecord {
    int64_t plant_id = 0;
    WorldBox box;
    StatValues stats;
};

/// Zonal statistics for every plant, computed in parallel. Logs a warning
/// with the number of plants that cover no valid cell.
std::vector<TraitRecord> compute_traits(const std::vector<PlantBox>& plants, const RasterGrid& grid,
                                        const std::vector<StatSpec>& stats);

/// Rectangles carrying the statistics as attribute fields.
std::vector<formats::Polygon> trait_polygons(const std::vector<TraitRecord>& records);

/// Columns: plant_id, min_x, min_y, max_x, max_y, then the statistics in
/// request order. Null statistics are empty fields.
void write_traits_csv(const std::vector<TraitRecord>& records, const std::vector<std::string>& stat_names,
                      const std::string& path);
/// Returns the records and the statistic column names.
std::pair<std::vector<TraitRecord>, std::vector<std::string>> read_traits_csv(const std::string& path);

/// Sample Pearson correlation. Throws InvalidArgument for unequal lengths,
/// fewer than two values or a constant input.
double pearson_r(const std::vector<double>& x, const std::vector<double>& y);

struct KsResult {
    double d = 0;
    double p = 1;
};

/// Asymptotic Kolmogorov distribution tail 2 sum (-1)^(k-1) exp(-2 k^2 l^2).
double kolmogorov_sf(double lambda);

/// Two-sample Kolmogorov-Smirnov statistic with the asymptotic p-value.
/// The p-value is unreliable for samples smaller than about 20.
KsResult ks_2samp(const std::vector<double>& x, const std::vector<double>& y);

struct TraitPair {
    int64_t pred_id = 0;
    int64_t manual_id = 0;
    double iou = 0;
};

struct TraitAgreement {
    std::string name;
    int n = 0;  // pairs where both values are present
    std::optional<double> r;
    std::optional<KsResult> ks;
    std::optional<double> mean_abs_diff;
};

struct AgreementReport {
    double iou_floor = 0.4;
    std::vector<TraitPair> pairs;
    int unpaired_pred = 0;
    int unpaired_manual = 0;
    std::vector<TraitAgreement> traits;
    std::array<int, 10> iou_histogram{};  // bins of width 0.1 over paired IoUs
    double mean_iou = 0;

    nlohmann::json to_json() const;
};

/// Pairs predictions with manual records greedily by descending world IoU
/// (ties by pred id, then manual id), keeping pairs at or above the floor,
/// then compares every statistic both sides share.
AgreementReport agreement_report(const std::vector<TraitRecord>& pred, const std::vector<TraitRecord>& manual,
                                 double iou_floor = 0.4);

}  // namespace orthotrace
