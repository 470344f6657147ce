#include "orthotrace/pipeline/stages.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <set>

#include <spdlog/spdlog.h>

#include "orthotrace/coverage.hpp"
#include "orthotrace/eval.hpp"
#include "orthotrace/formats/csv.hpp"
#include "orthotrace/formats/exif.hpp"
#include "orthotrace/formats/gcp_list.hpp"
#include "orthotrace/formats/geo_offset.hpp"
#include "orthotrace/formats/reconstruction.hpp"
#include "orthotrace/gcp_select.hpp"
#include "orthotrace/gps_embed.hpp"
#include "orthotrace/io.hpp"
#include "orthotrace/number_format.hpp"
#include "orthotrace/parallel.hpp"
#include "orthotrace/projector.hpp"
#include "orthotrace/tiler.hpp"
#include "orthotrace/traits.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace orthotrace::pipeline {

StageContext::StageContext(json params, std::string out_dir, std::string primary_file)
    : params_(std::move(params)), out_dir_(std::move(out_dir)), primary_file_(std::move(primary_file))
{
}

std::string StageContext::output(const std::string& name)
{
    if (out_dir_.empty())
        throw InvalidArgument("this stage needs an output location (--out)");
    std::string file = name;
    if (!primary_file_.empty())
        file = fs::path(primary_file_).stem().string() + "." + name;
    const fs::path p = fs::path(out_dir_) / file;
    fs::create_directories(p.parent_path());
    record(p.string());
    return p.string();
}

std::string StageContext::primary(const std::string& default_name)
{
    if (primary_file_.empty())
        return output(default_name);
    const fs::path p = fs::path(out_dir_) / primary_file_;
    fs::create_directories(p.parent_path());
    record(p.string());
    return p.string();
}

void StageContext::record(const std::string& path)
{
    if (std::find(written_.begin(), written_.end(), path) == written_.end())
        written_.push_back(path);
}

AffineGeotransform read_ortho_geotransform(const std::string& path)
{
    std::string ext = fs::path(path).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".tif" || ext == ".tiff" || ext == ".asc")
        return read_raster(path).gt;
    return read_world_file(path);
}

std::string hash_path(const std::string& path)
{
    if (!fs::is_directory(path))
        return sha256_file(path);
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(path))
        if (e.is_regular_file())
            files.push_back(fs::relative(e.path(), path).generic_string());
    std::sort(files.begin(), files.end());
    std::string listing;
    for (const auto& f : files)
        listing += f + '\t' + sha256_file((fs::path(path) / f).string()) + '\n';
    return sha256_hex({reinterpret_cast<const uint8_t*>(listing.data()), listing.size()});
}

namespace {

using K = ParamKind;

std::string str(const json& p, const char* key) { return p.at(key).get<std::string>(); }
double num(const json& p, const char* key) { return p.at(key).get<double>(); }
bool has(const json& p, const char* key) { return p.contains(key) && !p.at(key).is_null(); }

std::string base(const std::string& path) { return fs::path(path).filename().string(); }

// ---------------------------------------------------------------- gps_embed

json run_gps_embed(StageContext& ctx)
{
    const auto& p = ctx.params();
    MatchOptions opts;
    opts.max_dt = num(p, "max_dt");
    opts.clock_offset = num(p, "clock_offset");
    opts.interpolate = p.at("interpolate").get<bool>();
    std::string target = str(p, "images");
    if (ctx.has_output()) {
        // Pipeline runs embed into copies so the inputs stay untouched.
        for (const auto& src : list_jpegs(target)) {
            const std::string dst = ctx.output("images/" + base(src));
            fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
        }
        target = (fs::path(ctx.out_dir()) / "images").string();
        fs::create_directories(target);
    }
    const EmbedReport rep = gps_embed_directory(target, str(p, "gnss"), opts);
    json j = rep.to_json();
    for (auto& name : j["unmatched_images"])
        name = base(name.get<std::string>());
    for (auto& f : j["failures"])
        f["image"] = base(f["image"].get<std::string>());
    return j;
}

// ---------------------------------------------------------------------- gcp

json run_gcp(StageContext& ctx)
{
    const auto& p = ctx.params();
    std::optional<int> zone;
    if (has(p, "zone"))
        zone = p.at("zone").get<int>();
    const auto gcps = load_gcp_file(str(p, "gcps"), zone);
    if (gcps.empty())
        throw InvalidArgument("gcp: the GCP file lists no points");
    double radius = 0;
    if (has(p, "radius")) {
        radius = num(p, "radius");
    } else if (has(p, "flight_alt") && has(p, "sensor_width") && has(p, "sensor_height") && has(p, "sensor_focal")) {
        SensorSpec sensor{p.at("sensor_width").get<int>(), p.at("sensor_height").get<int>(), num(p, "sensor_focal")};
        radius = default_radius(num(p, "flight_alt"), sensor);
    } else {
        throw InvalidArgument("gcp.radius: give radius, or flight_alt with sensor_width, sensor_height and sensor_focal");
    }
    const int z = gcps.front().pos.zone;
    const auto images = image_positions_from_dir(str(p, "images"), z);
    const auto found = find_gcp_candidates(gcps, images, radius);

    json cands = json::array();
    for (const auto& g : found) {
        json list = json::array();
        for (const auto& c : g.candidates)
            list.push_back({{"image", c.image}, {"distance", c.distance}});
        cands.push_back({{"gcp", g.gcp.name},
                         {"easting", g.gcp.pos.easting},
                         {"northing", g.gcp.pos.northing},
                         {"elevation", g.gcp.elevation},
                         {"candidates", list}});
    }
    json report{{"radius", radius}, {"gcps", found.size()}, {"zone", z}};
    if (ctx.has_output())
        write_text_file(ctx.primary("candidates.json"), cands.dump(2) + "\n");
    else
        report["candidates"] = cands;

    if (has(p, "marks")) {
        const auto marks = formats::read_gcp_list(str(p, "marks"));
        formats::ImageDims dims;
        for (const auto& e : marks.entries) {
            const fs::path img = fs::path(str(p, "images")) / e.image_name;
            if (!dims.count(e.image_name) && fs::exists(img))
                dims[e.image_name] = formats::jpeg_dimensions(img.string());
        }
        const std::string proj = marks.projection.empty()
                                     ? formats::gcp_projection_line(Crs::utm(z, gcps.front().pos.hemisphere))
                                     : marks.projection;
        const auto warnings = assemble_gcp_list(marks.entries, proj, ctx.output("gcp_list.txt"), dims);
        report["gcp_list_entries"] = marks.entries.size();
        report["warnings"] = warnings;
    }
    return report;
}

// --------------------------------------------------------------- select_min

json run_select_min(StageContext& ctx)
{
    const auto& p = ctx.params();
    const auto rec = formats::read_reconstruction(str(p, "reconstruction"));
    FrameOffset off = FrameOffset::Zero();
    if (has(p, "geo_offset"))
        off = frame_offset(formats::read_geo_offset(str(p, "geo_offset")));
    std::optional<RasterGrid> dsm;
    if (has(p, "dsm"))
        dsm = read_raster(str(p, "dsm"));
    FootprintOptions fo;
    fo.ground_z = num(p, "ground_z");
    std::vector<std::string> failed;
    auto fps = compute_footprints(rec, off, dsm ? &*dsm : nullptr, fo, &failed);
    if (fps.empty())
        throw InvalidArgument("select-min: no image footprint reaches the ground");
    const FlightAxes axes = cluster_flight_lines(fps, num(p, "line_gap"));
    const Ring aoi = has(p, "aoi") ? read_aoi_csv(str(p, "aoi")) : default_aoi(fps, axes);
    CoverOptions co;
    co.min_h_overlap = num(p, "h_overlap");
    co.min_v_overlap = num(p, "v_overlap");
    co.max_uncovered = num(p, "max_uncovered");
    co.cell_size = num(p, "cell_size");
    const CoverageReport rep = select_minimum_cover(fps, aoi, co, axes);

    json j = rep.to_json();
    j["footprints"] = fps.size();
    j["failed_footprints"] = failed;
    if (ctx.has_output()) {
        std::string list;
        for (const auto& name : rep.selected)
            list += name + "\n";
        write_text_file(ctx.primary("selected.txt"), list);
        write_text_file(ctx.output("coverage.json"), j.dump(2) + "\n");
    }
    return j;
}

// --------------------------------------------------------------------- tile

json run_tile(StageContext& ctx)
{
    const auto& p = ctx.params();
    const auto set = formats::read_coco(str(p, "coco"));
    TileSpec spec;
    spec.tile_w = p.at("tile").get<int>();
    spec.tile_h = has(p, "tile_height") ? p.at("tile_height").get<int>() : spec.tile_w;
    spec.overlap = p.at("overlap").get<int>();
    spec.min_retention = num(p, "min_retention");
    spec.min_box_px = num(p, "min_box_px");
    spec.validate();
    const auto ratios_v = p.at("ratios").get<std::vector<double>>();
    if (ratios_v.size() != 3)
        throw InvalidArgument("tile.ratios: expected three values (train, val, test)");
    const SplitRatios ratios{ratios_v[0], ratios_v[1], ratios_v[2]};

    const auto tiles = tile_dataset(set, spec);
    const auto splits = split_dataset(tiles, ratios, p.at("seed").get<uint64_t>(), p.at("group_by_source").get<bool>());
    write_tiled_dataset(tiles, splits, set.categories, str(p, "images"), ctx.out_dir());
    for (size_t s = 0; s < 3; ++s) {
        const fs::path dir = fs::path(ctx.out_dir()) / kSplitNames[s];
        ctx.record((dir / "annotations.json").string());
        for (size_t i : splits[s])
            ctx.record((dir / "images" / tiles[i].image.file_name).string());
    }
    ctx.record((fs::path(ctx.out_dir()) / "tiles.csv").string());

    size_t boxes = 0;
    for (const auto& t : tiles)
        boxes += t.annotations.size();
    json counts = json::object();
    for (size_t s = 0; s < 3; ++s)
        counts[kSplitNames[s]] = splits[s].size();
    return {{"source_images", set.images.size()},
            {"source_annotations", set.annotations.size()},
            {"tiles", tiles.size()},
            {"tile_annotations", boxes},
            {"splits", counts}};
}

// -------------------------------------------------------------------- merge

json run_merge(StageContext& ctx)
{
    const auto& p = ctx.params();
    const auto dets = formats::read_detections(str(p, "detections"));
    const auto index = read_tile_index(str(p, "tile_index"));
    const auto merged = merge_tile_detections(dets, index, num(p, "nms_iou"));
    write_coco(merged, ctx.primary("detections.json"));
    return {{"tile_detections", dets.annotations.size()},
            {"merged_detections", merged.annotations.size()},
            {"images", merged.images.size()}};
}

// ------------------------------------------------------------------ project

json run_project(StageContext& ctx)
{
    const auto& p = ctx.params();
    const std::string interp = str(p, "interpolation");
    if (interp != "bilinear" && interp != "nearest")
        throw ConfigError("project.interpolation must be bilinear or nearest, got '" + interp + "'");
    const auto dets = formats::read_detections(str(p, "detections"));
    const auto rec = formats::read_reconstruction(str(p, "reconstruction"));
    for (const auto& w : rec.warnings)
        spdlog::warn("reconstruction: {}", w);
    FrameOffset off = FrameOffset::Zero();
    if (has(p, "geo_offset"))
        off = frame_offset(formats::read_geo_offset(str(p, "geo_offset")));
    const RasterGrid dsm = read_raster(str(p, "dsm"));
    const AffineGeotransform ortho = read_ortho_geotransform(str(p, "ortho_geotransform"));

    BatchOptions bo;
    bo.project.roi_margin = num(p, "roi_margin");
    bo.project.use_roi = p.at("use_roi").get<bool>();
    bo.project.edge_samples = p.at("edge_samples").get<int>();
    bo.project.min_landed_fraction = num(p, "min_landed_fraction");
    if (has(p, "step"))
        bo.project.intersect.step = num(p, "step");
    bo.project.intersect.tol = num(p, "tol");
    bo.project.intersect.max_range = num(p, "max_range");
    bo.project.intersect.interpolation = interp == "nearest" ? Interpolation::Nearest : Interpolation::Bilinear;
    bo.world_nms = p.at("world_nms").get<bool>();
    bo.world_nms_iou = num(p, "world_nms_iou");
    const BatchResult res = project_batch(dets, rec, off, dsm, ortho, bo);
    if (ctx.has_output())
        write_projection_csv(res.results, ctx.primary("projections.csv"));
    return res.summary.to_json();
}

// --------------------------------------------------------------------- eval

ApMethod parse_method(const std::string& s)
{
    if (s == "coco101")
        return ApMethod::Coco101;
    if (s == "all_point")
        return ApMethod::AllPoint;
    throw InvalidArgument("eval.method: expected coco101 or all_point, got '" + s + "'");
}

json run_eval(StageContext& ctx)
{
    const auto& p = ctx.params();
    const bool det = has(p, "dets") || has(p, "gts");
    const bool proj = has(p, "projections") || has(p, "manual");
    if (det && !(has(p, "dets") && has(p, "gts")))
        throw InvalidArgument("eval: dets and gts go together");
    if (proj && !(has(p, "projections") && has(p, "manual")))
        throw InvalidArgument("eval: projections and manual go together");
    if (!det && !proj)
        throw InvalidArgument("eval: give dets and gts, or projections and manual");
    json report = json::object();
    if (det) {
        const auto gts = formats::read_coco(str(p, "gts"));
        const auto dets = formats::read_detections(str(p, "dets"), &gts);
        EvalOptions eo;
        eo.iou_thr = num(p, "iou");
        eo.by_size = p.at("by_size").get<bool>();
        eo.method = parse_method(str(p, "method"));
        report["detection"] = evaluate(dets, gts, eo);
    }
    if (proj) {
        const auto results = read_projection_csv(str(p, "projections"));
        const auto manual = formats::read_coco(str(p, "manual"));
        report["projection"] = projection_validation(results, manual, num(p, "iou")).to_json();
    }
    if (ctx.has_output())
        write_text_file(ctx.primary("metrics.json"), report.dump(2) + "\n");
    return report;
}

// ------------------------------------------------------------------- traits

json run_traits(StageContext& ctx)
{
    const auto& p = ctx.params();
    if (!has(p, "boxes") && !has(p, "manual"))
        throw InvalidArgument("traits: give boxes (projection CSV) and/or manual (orthomosaic COCO)");
    const RasterGrid raster = read_raster(str(p, "raster"));
    std::vector<StatSpec> stats;
    std::vector<std::string> names;
    for (const auto& s : p.at("stats"))
        names.push_back(s.get<std::string>());
    {
        std::string joined;
        for (const auto& n : names)
            joined += n + ",";
        stats = parse_stat_list(joined);
    }
    std::optional<Crs> crs = raster.crs;
    if (has(p, "crs"))
        crs = Crs::parse(str(p, "crs"));

    json report = json::object();
    auto emit = [&](const PlantBoxes& pb, const std::string& csv_name, const std::string& shp_name,
                    bool primary) -> json {
        const auto recs = compute_traits(pb.plants, raster, stats);
        int empty = 0;
        for (const auto& r : recs)
            empty += r.stats.count("count") ? *r.stats.at("count") == 0
                                            : std::all_of(r.stats.begin(), r.stats.end(),
                                                          [](const auto& kv) { return !kv.second; });
        if (ctx.has_output()) {
            const std::string csv = primary ? ctx.primary(csv_name) : ctx.output(csv_name);
            write_traits_csv(recs, names, csv);
            if (!recs.empty()) {
                if (!crs)
                    throw InvalidArgument("traits.crs: the raster has no CRS; set crs for the shapefile");
                const std::string stem = (fs::path(csv).parent_path() / fs::path(csv).stem()).string();
                const std::string shp = primary ? stem : (fs::path(ctx.out_dir()) / shp_name).string();
                formats::write_shapefile(trait_polygons(recs), *crs, shp);
                for (const char* ext : {".shp", ".shx", ".dbf", ".prj"})
                    ctx.record(shp + ext);
            }
        }
        return {{"plants", recs.size()}, {"skipped", pb.skipped}, {"no_valid_cells", empty}};
    };
    if (has(p, "boxes"))
        report["predicted"] = emit(boxes_to_plants(read_projection_csv(str(p, "boxes"))), "traits.csv", "", true);
    if (has(p, "manual")) {
        if (!has(p, "ortho_geotransform"))
            throw InvalidArgument("traits.ortho_geotransform: required to georeference manual annotations");
        const auto pb = ortho_annotations_to_plants(formats::read_coco(str(p, "manual")),
                                                    read_ortho_geotransform(str(p, "ortho_geotransform")));
        report["manual"] = emit(pb, "manual_traits.csv", "manual_traits", !has(p, "boxes"));
    }
    report["stats"] = names;
    return report;
}

// -------------------------------------------------------------------- agree

json run_agree(StageContext& ctx)
{
    const auto& p = ctx.params();
    const auto [pred, pred_names] = read_traits_csv(str(p, "pred"));
    const auto [manual, manual_names] = read_traits_csv(str(p, "manual"));
    const AgreementReport rep = agreement_report(pred, manual, num(p, "iou_floor"));
    json j = rep.to_json();
    if (ctx.has_output()) {
        std::vector<std::string> shared;
        for (const auto& t : rep.traits)
            shared.push_back(t.name);
        formats::CsvRow header{"pred_id", "manual_id", "iou"};
        for (const auto& n : shared) {
            header.push_back(n + "_pred");
            header.push_back(n + "_manual");
        }
        std::map<int64_t, const TraitRecord*> by_pred, by_manual;
        for (const auto& r : pred)
            by_pred[r.plant_id] = &r;
        for (const auto& r : manual)
            by_manual[r.plant_id] = &r;
        std::vector<formats::CsvRow> rows;
        for (const auto& pr : rep.pairs) {
            formats::CsvRow row{std::to_string(pr.pred_id), std::to_string(pr.manual_id), format_fixed(pr.iou, 6)};
            for (const auto& n : shared)
                for (const auto* rec : {by_pred.at(pr.pred_id), by_manual.at(pr.manual_id)}) {
                    auto it = rec->stats.find(n);
                    row.push_back(it != rec->stats.end() && it->second ? format_shortest(*it->second) : "");
                }
            rows.push_back(std::move(row));
        }
        formats::write_csv(ctx.primary("pairs.csv"), header, rows);
        write_text_file(ctx.output("agreement.json"), j.dump(2) + "\n");
    }
    return j;
}

std::vector<StageSpec> build_specs()
{
    std::vector<StageSpec> s;
    s.push_back({"gps_embed",
                 "Write GNSS positions into image EXIF by nearest timestamp",
                 {{"images", K::InputDir, true, {}, "directory of JPEG images"},
                  {"gnss", K::InputFile, true, {}, "GNSS log CSV"},
                  {"max_dt", K::Number, false, 1.0, "largest accepted time gap in seconds"},
                  {"clock_offset", K::Number, false, 0.0, "seconds added to image timestamps"},
                  {"interpolate", K::Bool, false, false, "interpolate between bracketing fixes"}},
                 false,
                 run_gps_embed});
    s.push_back({"gcp",
                 "List candidate images per GCP and assemble gcp_list.txt from pixel marks",
                 {{"images", K::InputDir, true, {}, "directory of GPS-tagged JPEG images"},
                  {"gcps", K::InputFile, true, {}, "GCP coordinate CSV"},
                  {"zone", K::Integer, false, {}, "UTM zone for the search (default: from the GCP file)"},
                  {"radius", K::Number, false, {}, "search radius in meters"},
                  {"flight_alt", K::Number, false, {}, "flight altitude for the default radius"},
                  {"sensor_width", K::Integer, false, {}, "sensor width in pixels"},
                  {"sensor_height", K::Integer, false, {}, "sensor height in pixels"},
                  {"sensor_focal", K::Number, false, {}, "focal length over the larger sensor side"},
                  {"marks", K::InputFile, false, {}, "gcp_list file of confirmed pixel marks"}},
                 false,
                 run_gcp});
    s.push_back({"select_min",
                 "Select a minimal image subset that still covers the area of interest",
                 {{"reconstruction", K::InputFile, true, {}, "reconstruction.json"},
                  {"geo_offset", K::InputFile, false, {}, "geo offset file of the reconstruction frame"},
                  {"dsm", K::InputFile, false, {}, "DSM raster (flat ground when absent)"},
                  {"aoi", K::InputFile, false, {}, "AOI polygon CSV (x,y)"},
                  {"ground_z", K::Number, false, 0.0, "ground elevation without a DSM"},
                  {"h_overlap", K::Number, false, 0.1, "minimum along-track overlap"},
                  {"v_overlap", K::Number, false, 0.1, "minimum across-track overlap"},
                  {"max_uncovered", K::Number, false, 0.01, "largest tolerated uncovered AOI fraction"},
                  {"cell_size", K::Number, false, 0.0, "coverage check cell size in meters (0: automatic)"},
                  {"line_gap", K::Number, false, 0.0, "flight line separation threshold (0: automatic)"}},
                 true,
                 run_select_min});
    s.push_back({"tile",
                 "Cut annotated images into overlapping tiles and split train/val/test",
                 {{"coco", K::InputFile, true, {}, "COCO annotations of the source images"},
                  {"images", K::InputDir, true, {}, "source image directory"},
                  {"tile", K::Integer, false, 1024, "tile size in pixels"},
                  {"tile_height", K::Integer, false, {}, "tile height when it differs from the width"},
                  {"overlap", K::Integer, false, 100, "overlap between neighbouring tiles in pixels"},
                  {"min_retention", K::Number, false, 0.3, "clipped area share a box must keep"},
                  {"min_box_px", K::Number, false, 4.0, "smallest kept box side in pixels"},
                  {"ratios", K::NumberList, false, json::array({0.7, 0.15, 0.15}), "train,val,test ratios"},
                  {"seed", K::Integer, false, 42, "split seed"},
                  {"group_by_source", K::Bool, false, false, "keep tiles of one image in one split"}},
                 true,
                 run_tile});
    s.push_back({"merge",
                 "Map tile detections back to source images and remove duplicates",
                 {{"detections", K::InputFile, true, {}, "detections on tiles (COCO)"},
                  {"tile_index", K::InputFile, true, {}, "tiles.csv written by the tile stage"},
                  {"nms_iou", K::Number, false, 0.5, "NMS IoU threshold"}},
                 true,
                 run_merge});
    s.push_back({"project",
                 "Project image detections through camera poses onto the DSM",
                 {{"detections", K::InputFile, true, {}, "detections on source images (COCO)"},
                  {"reconstruction", K::InputFile, true, {}, "reconstruction.json"},
                  {"geo_offset", K::InputFile, false, {}, "geo offset file of the reconstruction frame"},
                  {"dsm", K::InputFile, true, {}, "DSM raster"},
                  {"ortho_geotransform", K::InputFile, true, {}, "orthomosaic world file or raster"},
                  {"roi_margin", K::Number, false, 0.25, "DSM crop margin around each box"},
                  {"use_roi", K::Bool, false, true, "intersect against a cropped DSM window"},
                  {"edge_samples", K::Integer, false, 3, "points per box edge including corners"},
                  {"min_landed_fraction", K::Number, false, 0.75, "share of edge points that must land"},
                  {"step", K::Number, false, {}, "ray marching step in meters (default: DSM cell)"},
                  {"tol", K::Number, false, 1e-3, "intersection tolerance in meters"},
                  {"max_range", K::Number, false, 1e5, "longest ray in meters"},
                  {"interpolation", K::String, false, "bilinear", "DSM sampling: bilinear or nearest"},
                  {"world_nms", K::Bool, false, true, "suppress duplicates across images"},
                  {"world_nms_iou", K::Number, false, 0.5, "world-space NMS IoU threshold"}},
                 true,
                 run_project});
    s.push_back({"eval",
                 "Detection metrics and projection validation",
                 {{"dets", K::InputFile, false, {}, "detections (COCO or result list)"},
                  {"gts", K::InputFile, false, {}, "ground truth COCO"},
                  {"iou", K::Number, false, 0.5, "IoU threshold"},
                  {"by_size", K::Bool, false, false, "also report small/medium/large"},
                  {"method", K::String, false, "coco101", "AP interpolation: coco101 or all_point"},
                  {"projections", K::InputFile, false, {}, "projection CSV"},
                  {"manual", K::InputFile, false, {}, "manual orthomosaic annotations (COCO)"}},
                 false,
                 run_eval});
    s.push_back({"traits",
                 "Plant polygons and zonal statistics over a raster",
                 {{"boxes", K::InputFile, false, {}, "projection CSV"},
                  {"raster", K::InputFile, true, {}, "CHM, NDVI or other single-band raster"},
                  {"stats", K::StringList, false, json::array({"mean", "median"}),
                   "mean, std, min, max, median, count, pXX"},
                  {"manual", K::InputFile, false, {}, "manual orthomosaic annotations (COCO)"},
                  {"ortho_geotransform", K::InputFile, false, {}, "orthomosaic world file or raster"},
                  {"crs", K::String, false, {}, "CRS of the shapefile (default: the raster's)"}},
                 true,
                 run_traits});
    s.push_back({"agree",
                 "Compare predicted and manual plant traits",
                 {{"pred", K::InputFile, true, {}, "traits CSV of predicted plants"},
                  {"manual", K::InputFile, true, {}, "traits CSV of manually annotated plants"},
                  {"iou_floor", K::Number, false, 0.4, "smallest world IoU for a pair"}},
                 false,
                 run_agree});
    s.push_back({"serve",
                 "HTTP service for annotation, GCP marking and projection preview",
                 {{"images", K::InputDir, true, {}, "project image directory"},
                  {"annotations", K::InputFile, false, {}, "initial COCO annotations"},
                  {"categories", K::StringList, false, json::array({"plant"}), "category names (at most five)"},
                  {"gcps", K::InputFile, false, {}, "GCP coordinate CSV"},
                  {"radius", K::Number, false, 30.0, "GCP candidate radius in meters"},
                  {"crs", K::String, false, {}, "CRS for gcp_list export (default: from the GCP file)"},
                  {"projections", K::InputFile, false, {}, "projection CSV for previews"},
                  {"manual", K::InputFile, false, {}, "manual orthomosaic annotations for preview IoUs"},
                  {"host", K::String, false, "127.0.0.1", "listen address"},
                  {"port", K::Integer, false, 8080, "listen port (0: any free port)"},
                  {"data", K::String, false, {}, "directory for saved state (default: <workdir>/serve)"}},
                 false,
                 {}});
    return s;
}

json relative_inputs(const StageSpec& stage, const json& params, const std::string& base_dir, json& inputs)
{
    json rel = params;
    for (const auto& spec : stage.params) {
        if ((spec.kind != K::InputFile && spec.kind != K::InputDir) || !has(params, spec.key.c_str()))
            continue;
        const std::string abs = params.at(spec.key).get<std::string>();
        const std::string r = fs::path(abs).lexically_relative(base_dir).generic_string();
        rel[spec.key] = r;
        inputs[spec.key] = {{"path", r}, {"sha256", hash_path(abs)}};
    }
    return rel;
}

}  // namespace

const std::vector<StageSpec>& stage_specs()
{
    static const std::vector<StageSpec> specs = build_specs();
    return specs;
}

const StageSpec& find_stage(const std::string& name)
{
    const std::string n = normalize_stage_name(name);
    for (const auto& s : stage_specs())
        if (s.name == n)
            return s;
    std::string known;
    for (const auto& s : stage_specs())
        known += (known.empty() ? "" : ", ") + s.name;
    throw InvalidArgument("unknown stage '" + name + "' (known: " + known + ")");
}

StageResult execute_stage(const StageSpec& stage, const json& params, StageContext& ctx, const std::string& base_dir,
                          const std::string& manifest_path)
{
    if (!stage.run)
        throw InvalidArgument("stage '" + stage.name + "' is a long-running service; start it with `serve`");
    if (stage.needs_output && !ctx.has_output())
        throw ConfigError(stage.name + ": --out is required");
    StageResult res;
    res.stage = stage.name;
    const auto t0 = std::chrono::steady_clock::now();
    res.report = stage.run(ctx);
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (manifest_path.empty())
        return res;

    json manifest;
    json inputs = json::object();
    manifest["stage"] = stage.name;
    manifest["tool"] = "orthotrace";
    manifest["parameters"] = relative_inputs(stage, params, base_dir, inputs);
    manifest["inputs"] = inputs;
    const fs::path mdir = fs::path(manifest_path).parent_path();
    std::vector<std::string> written = ctx.written();
    std::vector<std::pair<std::string, std::string>> outs;
    for (const auto& w : written)
        outs.emplace_back(fs::path(w).lexically_relative(mdir).generic_string(), w);
    std::sort(outs.begin(), outs.end());
    json outputs = json::array();
    for (const auto& [rel, abs] : outs)
        outputs.push_back({{"path", rel}, {"sha256", sha256_file(abs)}, {"bytes", fs::file_size(abs)}});
    manifest["outputs"] = outputs;
    write_text_file(manifest_path, manifest.dump(2) + "\n");
    res.manifest_path = manifest_path;
    return res;
}

StageResult run_stage(const PipelineConfig& cfg, const std::string& stage_name)
{
    const StageSpec* found = nullptr;
    try {
        found = &find_stage(stage_name);
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    const StageSpec& stage = *found;
    auto it = cfg.sections.find(stage.name);
    if (it == cfg.sections.end())
        throw ConfigError(cfg.path + ": no '" + stage.name + "' section");
    if (cfg.threads > 0)
        parallel_threads() = static_cast<unsigned>(cfg.threads);
    const json params = validate_params(stage.params, it->second);
    if (!stage.run)
        throw ConfigError("stage '" + stage.name + "' is a long-running service; start it with `serve`");

    const fs::path out = fs::path(cfg.workdir) / stage.name;
    fs::remove_all(out);
    fs::create_directories(out);
    spdlog::info("stage {}: writing {}", stage.name, out.string());
    StageContext ctx(params, out.string());
    StageResult res = execute_stage(stage, params, ctx, cfg.dir, (out / "manifest.json").string());
    write_text_file((out / "report.json").string(), res.report.dump(2) + "\n");
    write_text_file((fs::path(cfg.workdir) / (stage.name + ".timing.json")).string(),
                    json{{"stage", stage.name}, {"wall_seconds", res.seconds}}.dump(2) + "\n");
    spdlog::info("stage {}: done in {:.2f} s", stage.name, res.seconds);
    return res;
}

StageResult run_stage(const std::string& config_path, const std::string& stage)
{
    return run_stage(load_config(config_path), stage);
}

std::vector<StageResult> run_pipeline(const std::string& config_path)
{
    const PipelineConfig cfg = load_config(config_path);
    for (const auto& [name, raw] : cfg.sections) {
        try {
            find_stage(name);
        } catch (const InvalidArgument& e) {
            throw ConfigError(raw.origin + ":" + std::to_string(raw.section_line) + ": " + e.what());
        }
    }
    std::vector<StageResult> out;
    for (const auto& stage : stage_specs())
        if (stage.run && cfg.sections.count(stage.name))
            out.push_back(run_stage(cfg, stage.name));
    return out;
}

}  // namespace orthotrace::pipeline
