#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "orthotrace/formats/coco.hpp"

namespace orthotrace {

struct TileSpec {
    int tile_w = 1024;
    int tile_h = 1024;
    int overlap = 100;
    /// Clipped area over original area a box must keep to stay in a tile.
    /// For a clipped box this ratio is also its IoU with the original.
    double min_retention = 0.3;
    double min_box_px = 4;

    /// Throws InvalidArgument unless 0 <= overlap < min(tile_w, tile_h) and
    /// 0 <= min_retention <= 1.
    void validate() const;
};

struct TileRect {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    friend bool operator==(const TileRect&, const TileRect&) = default;
};

/// Row-major tile layout with stride tile - overlap. The last column and
/// row are shifted inward so every tile has the full tile size; images no
/// larger than a tile along an axis get one tile spanning that axis.
std::vector<TileRect> tile_grid(int img_w, int img_h, const TileSpec& spec = {});

/// Boxes of one source image clipped to a tile and moved into tile-local
/// coordinates. Kept boxes get ids next_id, next_id + 1, ... (next_id is
/// advanced) and provenance back to the source annotation.
std::vector<formats::Annotation> clip_annotations(const std::vector<const formats::Annotation*>& boxes,
                                                  const TileRect& tile, const TileSpec& spec, int64_t tile_image_id,
                                                  int64_t& next_id);

struct Tile {
    formats::ImageInfo image;  // the tile as a COCO image
    int64_t source_image_id = 0;
    std::string source_file;
    int source_w = 0;
    int source_h = 0;
    TileRect rect;
    std::vector<formats::Annotation> annotations;
};

/// Tiles every image of the set. Tile image ids run 1..n in (source image,
/// row, column) order; tile file names are `<stem>_x<X>_y<Y><ext>`.
std::vector<Tile> tile_dataset(const formats::AnnotationSet& set, const TileSpec& spec = {});

using SplitRatios = std::array<double, 3>;  // train, val, test
inline constexpr std::array<const char*, 3> kSplitNames{"train", "val", "test"};

/// Split sizes from cumulative rounding: split k ends at
/// round(n * (r_0 + ... + r_k)), halves rounding up; training absorbs the
/// rest.
std::array<size_t, 3> split_counts(size_t n, const SplitRatios& ratios);

/// Fisher-Yates over a 64-bit Mersenne Twister with rejection sampling, so
/// the permutation depends only on the seed (not on the standard library).
std::vector<size_t> seeded_permutation(size_t n, uint64_t seed);

/// Tile indices per split. With group_by_source every tile of a source image
/// goes to the same split; split sizes then follow the cumulative targets as
/// closely as whole images allow.
std::array<std::vector<size_t>, 3> split_dataset(const std::vector<Tile>& tiles, const SplitRatios& ratios,
                                                 uint64_t seed, bool group_by_source = false);

/// COCO set for one split (images, annotations, all categories).
formats::AnnotationSet split_annotations(const std::vector<Tile>& tiles, const std::vector<size_t>& indices,
                                         const std::vector<formats::Category>& categories);

/// Writes `<out>/<split>/images/*` (crops of the source images found in
/// images_dir), `<out>/<split>/annotations.json` and `<out>/tiles.csv`.
void write_tiled_dataset(const std::vector<Tile>& tiles, const std::array<std::vector<size_t>, 3>& splits,
                         const std::vector<formats::Category>& categories, const std::string& images_dir,
                         const std::string& out_dir);

/// One row of tiles.csv.
struct TileRecord {
    std::string tile_file;
    int64_t source_id = 0;
    std::string source_file;
    int source_w = 0;
    int source_h = 0;
    TileRect rect;
    std::string split;
};
std::vector<TileRecord> tile_records(const std::vector<Tile>& tiles, const std::array<std::vector<size_t>, 3>& splits);
void write_tile_index(const std::vector<TileRecord>& records, const std::string& path);
std::vector<TileRecord> read_tile_index(const std::string& path);

/// Greedy score-ordered NMS (ties: larger box first, then input order).
/// Returns keep flags.
std::vector<bool> nms(const std::vector<BBox>& boxes, const std::vector<double>& scores, double iou_thr);

/// Moves tile detections back into source-image coordinates and removes
/// duplicates from tile overlaps with class-wise NMS per source image.
/// Detections on images missing from the index are an error. Output ids run
/// 1..n ordered by source image, then descending score.
formats::DetectionSet merge_tile_detections(const formats::DetectionSet& tile_dets,
                                            const std::vector<TileRecord>& index, double nms_iou = 0.5);

}  // namespace orthotrace
