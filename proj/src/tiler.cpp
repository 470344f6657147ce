#include "orthotrace/tiler.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include <opencv2/imgcodecs.hpp>
#include <spdlog/spdlog.h>

#include "orthotrace/error.hpp"
#include "orthotrace/formats/csv.hpp"
#include "orthotrace/io.hpp"
#include "orthotrace/number_format.hpp"
#include "orthotrace/parallel.hpp"

namespace fs = std::filesystem;

namespace orthotrace {

void TileSpec::validate() const
{
    if (tile_w <= 0 || tile_h <= 0)
        throw InvalidArgument("tile size must be positive");
    if (overlap < 0 || overlap >= std::min(tile_w, tile_h))
        throw InvalidArgument("tile overlap must be in [0, min(tile_w, tile_h))");
    if (!(min_retention >= 0 && min_retention <= 1))
        throw InvalidArgument("min_retention must be in [0, 1]");
    if (!(min_box_px >= 0))
        throw InvalidArgument("min_box_px must be non-negative");
}

namespace {

std::vector<std::pair<int, int>> axis_tiles(int size, int tile, int stride)
{
    if (size <= tile)
        return {{0, size}};
    const int n = (size - tile + stride - 1) / stride + 1;
    std::vector<std::pair<int, int>> out;
    for (int i = 0; i < n; ++i)
        out.emplace_back(std::min(i * stride, size - tile), tile);
    return out;
}

}  // namespace

std::vector<TileRect> tile_grid(int img_w, int img_h, const TileSpec& spec)
{
    spec.validate();
    if (img_w <= 0 || img_h <= 0)
        throw InvalidArgument("image dimensions must be positive");
    if (img_w < spec.overlap || img_h < spec.overlap)
        throw InvalidArgument("image " + std::to_string(img_w) + "x" + std::to_string(img_h)
                              + " is smaller than the tile overlap");
    std::vector<TileRect> out;
    for (const auto& [y, h] : axis_tiles(img_h, spec.tile_h, spec.tile_h - spec.overlap))
        for (const auto& [x, w] : axis_tiles(img_w, spec.tile_w, spec.tile_w - spec.overlap))
            out.push_back({x, y, w, h});
    return out;
}

std::vector<formats::Annotation> clip_annotations(const std::vector<const formats::Annotation*>& boxes,
                                                  const TileRect& tile, const TileSpec& spec, int64_t tile_image_id,
                                                  int64_t& next_id)
{
    const BBox t{double(tile.x), double(tile.y), double(tile.w), double(tile.h)};
    std::vector<formats::Annotation> out;
    for (const auto* a : boxes) {
        const BBox c = intersect(a->bbox, t);
        if (c.w <= 0 || c.h <= 0)
            continue;
        const double orig = a->bbox.area();
        if (c.area() < spec.min_retention * orig * (1 - 1e-12))
            continue;
        if (std::min(c.w, c.h) < spec.min_box_px)
            continue;
        formats::Annotation n;
        n.id = next_id++;
        n.image_id = tile_image_id;
        n.category_id = a->category_id;
        n.bbox = {c.x - tile.x, c.y - tile.y, c.w, c.h};
        n.area = n.bbox.area();
        n.score = a->score;
        n.provenance = formats::Provenance{a->image_id, a->id, tile.x, tile.y};
        out.push_back(std::move(n));
    }
    return out;
}

std::vector<Tile> tile_dataset(const formats::AnnotationSet& set, const TileSpec& spec)
{
    spec.validate();
    std::vector<const formats::ImageInfo*> images;
    for (const auto& im : set.images)
        images.push_back(&im);
    std::sort(images.begin(), images.end(), [](auto* a, auto* b) { return a->id < b->id; });

    std::vector<Tile> tiles;
    int64_t next_ann = 1;
    for (const auto* im : images) {
        if (im->width <= 0 || im->height <= 0)
            throw InvalidArgument("image '" + im->file_name + "' has no dimensions");
        const auto anns = set.annotations_for(im->id);
        const fs::path p(im->file_name);
        const std::string stem = p.stem().string(), ext = p.extension().string();
        for (const auto& r : tile_grid(im->width, im->height, spec)) {
            Tile t;
            t.image.id = static_cast<int64_t>(tiles.size()) + 1;
            t.image.file_name = stem + "_x" + std::to_string(r.x) + "_y" + std::to_string(r.y) + ext;
            t.image.width = r.w;
            t.image.height = r.h;
            t.source_image_id = im->id;
            t.source_file = im->file_name;
            t.source_w = im->width;
            t.source_h = im->height;
            t.rect = r;
            t.annotations = clip_annotations(anns, r, spec, t.image.id, next_ann);
            tiles.push_back(std::move(t));
        }
    }
    return tiles;
}

std::array<size_t, 3> split_counts(size_t n, const SplitRatios& ratios)
{
    double sum = 0;
    for (double r : ratios) {
        if (!(r >= 0))
            throw InvalidArgument("split ratios must be non-negative");
        sum += r;
    }
    if (std::abs(sum - 1) > 1e-9)
        throw InvalidArgument("split ratios must sum to 1");
    const size_t nonzero = std::count_if(ratios.begin(), ratios.end(), [](double r) { return r > 0; });
    if (n < nonzero)
        throw InvalidArgument("cannot split " + std::to_string(n) + " tiles into " + std::to_string(nonzero)
                              + " sets");
    // The small tolerance keeps exact halves such as 8.5 from rounding down
    // through representation error in the cumulative sum.
    auto boundary = [&](double cum) {
        return std::min(n, static_cast<size_t>(std::floor(static_cast<double>(n) * cum + 0.5 + 1e-9)));
    };
    const size_t b1 = boundary(ratios[0]);
    const size_t b2 = std::max(b1, boundary(ratios[0] + ratios[1]));
    return {b1, b2 - b1, n - b2};
}

std::vector<size_t> seeded_permutation(size_t n, uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::vector<size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    for (size_t i = n; i > 1; --i) {
        const uint64_t bound = i;
        const uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % bound;
        uint64_t x;
        do
            x = rng();
        while (x >= limit);
        std::swap(p[i - 1], p[x % bound]);
    }
    return p;
}

std::array<std::vector<size_t>, 3> split_dataset(const std::vector<Tile>& tiles, const SplitRatios& ratios,
                                                 uint64_t seed, bool group_by_source)
{
    const auto counts = split_counts(tiles.size(), ratios);
    const size_t b1 = counts[0], b2 = counts[0] + counts[1];
    std::array<std::vector<size_t>, 3> out;
    auto split_of = [&](size_t pos) { return pos < b1 ? 0 : pos < b2 ? 1 : 2; };

    if (!group_by_source) {
        const auto perm = seeded_permutation(tiles.size(), seed);
        for (size_t k = 0; k < perm.size(); ++k)
            out[split_of(k)].push_back(perm[k]);
    } else {
        std::map<int64_t, std::vector<size_t>> groups;
        for (size_t i = 0; i < tiles.size(); ++i)
            groups[tiles[i].source_image_id].push_back(i);
        std::vector<const std::vector<size_t>*> g;
        for (const auto& [id, members] : groups)
            g.push_back(&members);
        const auto perm = seeded_permutation(g.size(), seed);
        size_t pos = 0;
        for (size_t k : perm) {
            // A group joins the split its first tile position falls in.
            auto& dst = out[split_of(pos)];
            dst.insert(dst.end(), g[k]->begin(), g[k]->end());
            pos += g[k]->size();
        }
    }
    for (auto& s : out)
        std::sort(s.begin(), s.end());
    return out;
}

formats::AnnotationSet split_annotations(const std::vector<Tile>& tiles, const std::vector<size_t>& indices,
                                         const std::vector<formats::Category>& categories)
{
    formats::AnnotationSet set;
    set.categories = categories;
    for (size_t i : indices) {
        set.images.push_back(tiles[i].image);
        for (const auto& a : tiles[i].annotations) {
            formats::Annotation copy = a;
            copy.score.reset();
            set.annotations.push_back(std::move(copy));
        }
    }
    return set;
}

std::vector<TileRecord> tile_records(const std::vector<Tile>& tiles, const std::array<std::vector<size_t>, 3>& splits)
{
    std::vector<std::string> split_of(tiles.size());
    for (size_t s = 0; s < 3; ++s)
        for (size_t i : splits[s])
            split_of.at(i) = kSplitNames[s];
    std::vector<TileRecord> out;
    for (size_t i = 0; i < tiles.size(); ++i) {
        const Tile& t = tiles[i];
        out.push_back({t.image.file_name, t.source_image_id, t.source_file, t.source_w, t.source_h, t.rect,
                       split_of[i]});
    }
    return out;
}

void write_tile_index(const std::vector<TileRecord>& records, const std::string& path)
{
    std::vector<formats::CsvRow> rows;
    for (const auto& r : records)
        rows.push_back({r.tile_file, std::to_string(r.source_id), r.source_file, std::to_string(r.source_w),
                        std::to_string(r.source_h), std::to_string(r.rect.x), std::to_string(r.rect.y),
                        std::to_string(r.rect.w), std::to_string(r.rect.h), r.split});
    formats::write_csv(path,
                       {"tile_file", "source_id", "source_file", "source_w", "source_h", "tile_x", "tile_y",
                        "tile_w", "tile_h", "split"},
                       rows);
}

std::vector<TileRecord> read_tile_index(const std::string& path)
{
    const auto t = formats::CsvTable::read(path);
    std::vector<TileRecord> out;
    auto integer = [&](size_t i, const char* col) {
        try {
            return static_cast<int>(parse_int(t.get(i, col)));
        } catch (const ParseError& e) {
            throw ParseError("tile index " + path + ": " + e.what(), static_cast<int>(t.line_of(i)));
        }
    };
    for (size_t i = 0; i < t.size(); ++i) {
        TileRecord r;
        r.tile_file = t.get(i, "tile_file");
        r.source_id = integer(i, "source_id");
        r.source_file = t.get(i, "source_file");
        r.source_w = integer(i, "source_w");
        r.source_h = integer(i, "source_h");
        r.rect = {integer(i, "tile_x"), integer(i, "tile_y"), integer(i, "tile_w"), integer(i, "tile_h")};
        r.split = t.has("split") ? t.get(i, "split") : "";
        out.push_back(std::move(r));
    }
    return out;
}

void write_tiled_dataset(const std::vector<Tile>& tiles, const std::array<std::vector<size_t>, 3>& splits,
                         const std::vector<formats::Category>& categories, const std::string& images_dir,
                         const std::string& out_dir)
{
    for (size_t s = 0; s < 3; ++s)
        fs::create_directories(fs::path(out_dir) / kSplitNames[s] / "images");

    // Crop per source image so each source is decoded once.
    std::map<std::string, std::vector<std::pair<size_t, size_t>>> by_source;  // file -> (tile, split)
    for (size_t s = 0; s < 3; ++s)
        for (size_t i : splits[s])
            by_source[tiles[i].source_file].emplace_back(i, s);
    std::vector<const std::pair<const std::string, std::vector<std::pair<size_t, size_t>>>*> jobs;
    for (const auto& kv : by_source)
        jobs.push_back(&kv);
    parallel_for(jobs.size(), [&](size_t j) {
        const auto& [source, members] = *jobs[j];
        const std::string src = (fs::path(images_dir) / source).string();
        const cv::Mat img = cv::imread(src, cv::IMREAD_UNCHANGED);
        if (img.empty())
            throw Error("cannot read image " + src);
        for (const auto& [i, s] : members) {
            const Tile& t = tiles[i];
            if (img.cols != t.source_w || img.rows != t.source_h)
                throw InvalidArgument("image " + src + " is " + std::to_string(img.cols) + "x"
                                      + std::to_string(img.rows) + ", annotations say "
                                      + std::to_string(t.source_w) + "x" + std::to_string(t.source_h));
            const cv::Mat crop = img(cv::Rect(t.rect.x, t.rect.y, t.rect.w, t.rect.h));
            std::vector<uchar> buf;
            const std::string ext = fs::path(t.image.file_name).extension().string();
            if (!cv::imencode(ext.empty() ? ".png" : ext, crop, buf, {cv::IMWRITE_JPEG_QUALITY, 95}))
                throw Error("cannot encode tile " + t.image.file_name);
            write_file_atomic((fs::path(out_dir) / kSplitNames[s] / "images" / t.image.file_name).string(),
                              std::span<const uint8_t>(buf.data(), buf.size()));
        }
    });
    for (size_t s = 0; s < 3; ++s)
        formats::write_coco(split_annotations(tiles, splits[s], categories),
                            (fs::path(out_dir) / kSplitNames[s] / "annotations.json").string());
    write_tile_index(tile_records(tiles, splits), (fs::path(out_dir) / "tiles.csv").string());
}

std::vector<bool> nms(const std::vector<BBox>& boxes, const std::vector<double>& scores, double iou_thr)
{
    std::vector<size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b])
            return scores[a] > scores[b];
        return boxes[a].area() > boxes[b].area();
    });
    std::vector<bool> keep(boxes.size(), false);
    std::vector<size_t> kept;
    for (size_t i : order) {
        bool ok = true;
        for (size_t j : kept)
            if (iou(boxes[i], boxes[j]) >= iou_thr) {
                ok = false;
                break;
            }
        if (ok) {
            keep[i] = true;
            kept.push_back(i);
        }
    }
    return keep;
}

formats::DetectionSet merge_tile_detections(const formats::DetectionSet& tile_dets,
                                            const std::vector<TileRecord>& index, double nms_iou)
{
    std::map<std::string, const TileRecord*> by_tile;
    for (const auto& r : index)
        by_tile[r.tile_file] = &r;

    formats::DetectionSet out;
    out.categories = tile_dets.categories;
    std::map<int64_t, formats::ImageInfo> sources;
    // (source id, category) -> translated detections
    std::map<std::pair<int64_t, int64_t>, std::vector<formats::Annotation>> groups;
    for (const auto& a : tile_dets.annotations) {
        const auto* im = tile_dets.find_image(a.image_id);
        if (!im)
            throw InvalidArgument("detection " + std::to_string(a.id) + " references unknown image");
        const auto it = by_tile.find(im->file_name);
        if (it == by_tile.end())
            throw InvalidArgument("tile '" + im->file_name + "' is not in the tile index");
        const TileRecord& r = *it->second;
        sources.try_emplace(r.source_id, formats::ImageInfo{r.source_id, r.source_file, r.source_w, r.source_h, {}});
        formats::Annotation m = a;
        m.image_id = r.source_id;
        m.bbox.x += r.rect.x;
        m.bbox.y += r.rect.y;
        m.area = m.bbox.area();
        m.provenance = formats::Provenance{r.source_id, a.id, r.rect.x, r.rect.y};
        groups[{r.source_id, a.category_id}].push_back(std::move(m));
    }
    // Every indexed source appears, even without detections.
    for (const auto& r : index)
        sources.try_emplace(r.source_id, formats::ImageInfo{r.source_id, r.source_file, r.source_w, r.source_h, {}});
    for (auto& [id, im] : sources)
        out.images.push_back(im);

    std::map<int64_t, std::vector<formats::Annotation>> kept_by_image;
    for (auto& [key, dets] : groups) {
        std::vector<BBox> boxes;
        std::vector<double> scores;
        for (const auto& d : dets) {
            boxes.push_back(d.bbox);
            scores.push_back(d.score.value_or(1.0));
        }
        const auto keep = nms(boxes, scores, nms_iou);
        for (size_t i = 0; i < dets.size(); ++i)
            if (keep[i])
                kept_by_image[key.first].push_back(std::move(dets[i]));
    }
    int64_t next = 1;
    for (auto& [img, dets] : kept_by_image) {
        std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) {
            return a.score.value_or(1.0) > b.score.value_or(1.0);
        });
        for (auto& d : dets) {
            d.id = next++;
            out.annotations.push_back(std::move(d));
        }
    }
    return out;
}

}  // namespace orthotrace
