#include "orthotrace/pipeline/server.hpp"

#include <filesystem>
#include <map>
#include <mutex>

#include <spdlog/spdlog.h>

#include "index_html.hpp"
#include "orthotrace/error.hpp"
#include "orthotrace/formats/coco.hpp"
#include "orthotrace/formats/exif.hpp"
#include "orthotrace/formats/gcp_list.hpp"
#include "orthotrace/gcp_select.hpp"
#include "orthotrace/gps_embed.hpp"
#include "orthotrace/io.hpp"
#include "orthotrace/number_format.hpp"
#include "orthotrace/projector.hpp"

// resolv.h (via httplib) defines _res, which collides with Eigen internals.
#include <httplib.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace orthotrace::pipeline {

ServeOptions ServeOptions::from_params(const json& p, const std::string& default_data_dir)
{
    ServeOptions o;
    auto opt = [&](const char* key) -> std::optional<std::string> {
        if (p.contains(key) && !p.at(key).is_null())
            return p.at(key).get<std::string>();
        return std::nullopt;
    };
    o.images_dir = p.at("images").get<std::string>();
    o.data_dir = opt("data").value_or(default_data_dir);
    o.annotations = opt("annotations");
    o.categories = p.at("categories").get<std::vector<std::string>>();
    o.gcps = opt("gcps");
    o.radius = p.at("radius").get<double>();
    if (auto c = opt("crs"))
        o.crs = Crs::parse(*c);
    o.projections = opt("projections");
    o.manual = opt("manual");
    o.host = p.at("host").get<std::string>();
    o.port = p.at("port").get<int>();
    return o;
}

namespace {

struct HttpError : Error {
    int status;
    HttpError(int s, const std::string& msg) : Error(msg), status(s) {}
};

json bbox_json(const BBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

BBox parse_bbox(const json& j)
{
    if (!j.is_array() || j.size() != 4)
        throw HttpError(400, "bbox must be [x, y, w, h]");
    for (const auto& v : j)
        if (!v.is_number())
            throw HttpError(400, "bbox values must be numbers");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json parse_body(const httplib::Request& req)
{
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        throw HttpError(400, std::string("request body is not JSON: ") + e.what());
    }
}

}  // namespace

struct Service::Impl {
    ServeOptions opts;
    httplib::Server http;
    std::vector<formats::ImageInfo> images;
    std::vector<formats::Category> categories;
    formats::AnnotationSet initial;
    std::map<int64_t, std::unique_ptr<std::mutex>> image_locks;
    std::mutex gcp_lock;
    std::mutex export_lock;
    std::vector<GroundControlPoint> gcps;
    std::mutex positions_lock;
    std::optional<std::vector<ImagePosition>> positions;
    std::vector<ProjectionResult> projections;
    formats::AnnotationSet manual;
    int port = 0;
    std::mutex run_lock;
    bool started = false;
    bool stopped = false;

    explicit Impl(ServeOptions o) : opts(std::move(o))
    {
        if (opts.categories.empty() || opts.categories.size() > 5)
            throw InvalidArgument("serve: between one and five categories are supported");
        for (size_t i = 0; i < opts.categories.size(); ++i)
            categories.push_back({static_cast<int64_t>(i) + 1, opts.categories[i], {}});
        int64_t id = 1;
        for (const auto& path : list_jpegs(opts.images_dir)) {
            const auto [w, h] = formats::jpeg_dimensions(path);
            images.push_back({id, fs::path(path).filename().string(), w, h, {}});
            image_locks[id] = std::make_unique<std::mutex>();
            ++id;
        }
        if (opts.annotations)
            initial = formats::read_coco(*opts.annotations);
        if (opts.gcps)
            gcps = load_gcp_file(*opts.gcps);
        if (opts.projections)
            projections = read_projection_csv(*opts.projections);
        if (opts.manual)
            manual = formats::read_coco(*opts.manual);
        fs::create_directories(fs::path(opts.data_dir) / "annotations");
        // httplib's default sets SO_REUSEPORT, which lets a second server
        // share a busy port silently.
        http.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
        });
        routes();
    }

    const formats::ImageInfo& image(const std::string& id_text)
    {
        int64_t id = 0;
        try {
            id = parse_int(id_text);
        } catch (const ParseError&) {
        }
        if (id < 1 || id > static_cast<int64_t>(images.size()))
            throw HttpError(404, "no image with id " + id_text);
        return images[static_cast<size_t>(id - 1)];
    }

    std::string annotation_path(const formats::ImageInfo& im) const
    {
        return (fs::path(opts.data_dir) / "annotations" / (im.file_name + ".json")).string();
    }

    // Caller holds the image lock.
    json load_annotations(const formats::ImageInfo& im)
    {
        const std::string path = annotation_path(im);
        if (fs::exists(path))
            return json::parse(read_text_file(path));
        json anns = json::array();
        if (const auto* src = initial.find_image(im.file_name))
            for (const auto* a : initial.annotations_for(src->id))
                anns.push_back({{"id", a->id}, {"category_id", a->category_id}, {"bbox", bbox_json(a->bbox)},
                                {"area", a->bbox.area()}});
        return {{"image_id", im.id}, {"file_name", im.file_name}, {"width", im.width}, {"height", im.height},
                {"version", 0},      {"annotations", anns}};
    }

    json save_annotations(const formats::ImageInfo& im, const json& body)
    {
        if (!body.is_object() || !body.contains("annotations") || !body["annotations"].is_array())
            throw HttpError(400, "expected {\"annotations\": [...]}");
        json anns = json::array();
        std::set<int64_t> ids;
        int64_t next = 1;
        for (const auto& a : body["annotations"])
            if (a.contains("id") && a["id"].is_number_integer())
                next = std::max(next, a["id"].get<int64_t>() + 1);
        for (const auto& a : body["annotations"]) {
            if (!a.is_object())
                throw HttpError(400, "annotation must be an object");
            const BBox b = parse_bbox(a.value("bbox", json()));
            const int64_t cat = a.value("category_id", int64_t{0});
            if (!(b.w > 0 && b.h > 0))
                throw HttpError(400, "bbox width and height must be positive");
            if (b.x < 0 || b.y < 0 || b.x + b.w > im.width + 1e-9 || b.y + b.h > im.height + 1e-9)
                throw HttpError(400, "bbox lies outside the " + std::to_string(im.width) + "x"
                                         + std::to_string(im.height) + " image");
            if (cat < 1 || cat > static_cast<int64_t>(categories.size()))
                throw HttpError(400, "category_id " + std::to_string(cat) + " is not a project category");
            int64_t id = a.contains("id") && a["id"].is_number_integer() ? a["id"].get<int64_t>() : 0;
            if (id < 1 || ids.count(id))
                id = next++;
            ids.insert(id);
            anns.push_back({{"id", id}, {"category_id", cat}, {"bbox", bbox_json(b)}, {"area", b.area()}});
        }
        std::lock_guard lock(*image_locks.at(im.id));
        json current = load_annotations(im);
        const int64_t prev = current["version"].get<int64_t>();
        json rec = {{"image_id", im.id}, {"file_name", im.file_name}, {"width", im.width},
                    {"height", im.height}, {"version", prev + 1}, {"annotations", anns}};
        write_text_file(annotation_path(im), rec.dump(2) + "\n");
        json resp = rec;
        // Last write wins; a stale base version is reported, not rejected.
        resp["previous_version"] = prev;
        resp["conflict"] = body.contains("version") && body["version"] != prev;
        return resp;
    }

    std::string gcp_path() const { return (fs::path(opts.data_dir) / "gcps.json").string(); }

    json load_gcps()
    {
        if (fs::exists(gcp_path()))
            return json::parse(read_text_file(gcp_path()));
        return {{"version", 0}, {"marks", json::array()}};
    }

    const GroundControlPoint* find_gcp(const std::string& name) const
    {
        for (const auto& g : gcps)
            if (g.name == name)
                return &g;
        return nullptr;
    }

    json save_gcps(const json& body)
    {
        if (!body.is_object() || !body.contains("marks") || !body["marks"].is_array())
            throw HttpError(400, "expected {\"marks\": [...]}");
        json marks = json::array();
        for (const auto& m : body["marks"]) {
            if (!m.is_object())
                throw HttpError(400, "mark must be an object");
            const std::string gcp_id = m.value("gcp_id", std::string());
            const std::string image_name = m.value("image_name", std::string());
            if (gcp_id.empty() || image_name.empty())
                throw HttpError(400, "mark needs gcp_id and image_name");
            const auto* im = initial_image(image_name);
            if (!im)
                throw HttpError(400, "unknown image '" + image_name + "'");
            if (!m.contains("im_x") || !m.contains("im_y") || !m["im_x"].is_number() || !m["im_y"].is_number())
                throw HttpError(400, "mark needs numeric im_x and im_y");
            const double x = m["im_x"].get<double>(), y = m["im_y"].get<double>();
            if (x < 0 || y < 0 || x > im->width || y > im->height)
                throw HttpError(400, "mark lies outside image '" + image_name + "'");
            json out = {{"gcp_id", gcp_id}, {"image_name", image_name}, {"im_x", x}, {"im_y", y},
                        {"confirmed", m.value("confirmed", false)}};
            if (m.contains("geo_x") && m.contains("geo_y")) {
                out["geo_x"] = m["geo_x"];
                out["geo_y"] = m["geo_y"];
                out["geo_z"] = m.value("geo_z", 0.0);
            } else if (const auto* g = find_gcp(gcp_id)) {
                out["geo_x"] = g->pos.easting;
                out["geo_y"] = g->pos.northing;
                out["geo_z"] = g->elevation;
            } else {
                throw HttpError(400, "mark for unknown GCP '" + gcp_id + "' needs geo_x and geo_y");
            }
            marks.push_back(out);
        }
        std::lock_guard lock(gcp_lock);
        const int64_t prev = load_gcps()["version"].get<int64_t>();
        json rec = {{"version", prev + 1}, {"marks", marks}};
        write_text_file(gcp_path(), rec.dump(2) + "\n");
        json resp = rec;
        resp["previous_version"] = prev;
        resp["conflict"] = body.contains("version") && body["version"] != prev;
        return resp;
    }

    const formats::ImageInfo* initial_image(const std::string& name) const
    {
        for (const auto& im : images)
            if (im.file_name == name)
                return &im;
        return nullptr;
    }

    json candidates(const std::string& gcp_id)
    {
        const auto* g = find_gcp(gcp_id);
        if (!g)
            throw HttpError(404, "no GCP named '" + gcp_id + "'");
        std::vector<ImagePosition> pos;
        {
            std::lock_guard lock(positions_lock);
            if (!positions)
                positions = image_positions_from_dir(opts.images_dir, g->pos.zone);
            pos = *positions;
        }
        json out = json::array();
        for (const auto& c : candidate_images(g->pos, pos, opts.radius)) {
            const auto* im = initial_image(c.image);
            out.push_back({{"image", c.image}, {"image_id", im ? im->id : 0}, {"distance", c.distance}});
        }
        return out;
    }

    json preview(const std::string& image_param)
    {
        std::string name;
        if (!image_param.empty() && image_param != "orthomosaic")
            name = image(image_param).file_name;
        json out = json::array();
        for (const auto& r : projections) {
            if (!name.empty() && r.source_image != name)
                continue;
            json j = {{"det_id", r.det_id},
                      {"source_image", r.source_image},
                      {"score", r.score},
                      {"category_id", r.category_id},
                      {"status", to_string(r.status)},
                      {"source_bbox", bbox_json(r.source_bbox)}};
            if (r.world_bbox)
                j["world_bbox"] = {r.world_bbox->min_x, r.world_bbox->min_y, r.world_bbox->max_x, r.world_bbox->max_y};
            if (r.ortho_bbox) {
                j["ortho_bbox"] = bbox_json(*r.ortho_bbox);
                if (!manual.annotations.empty()) {
                    double best = 0;
                    for (const auto& m : manual.annotations)
                        best = std::max(best, iou(*r.ortho_bbox, m.bbox));
                    j["iou"] = best;
                }
            }
            out.push_back(j);
        }
        return out;
    }

    formats::AnnotationSet current_set()
    {
        formats::AnnotationSet set;
        set.categories = categories;
        int64_t next = 1;
        for (const auto& im : images) {
            set.images.push_back(im);
            json rec;
            {
                std::lock_guard lock(*image_locks.at(im.id));
                rec = load_annotations(im);
            }
            for (const auto& a : rec["annotations"]) {
                formats::Annotation ann;
                ann.id = next++;
                ann.image_id = im.id;
                ann.category_id = a["category_id"].get<int64_t>();
                ann.bbox = parse_bbox(a["bbox"]);
                ann.area = ann.bbox.area();
                set.annotations.push_back(ann);
            }
        }
        return set;
    }

    void export_to(const std::string& format, httplib::Response& res)
    {
        std::lock_guard lock(export_lock);
        const fs::path dir = fs::path(opts.data_dir) / "export";
        fs::create_directories(dir);
        if (format == "coco") {
            const auto set = current_set();
            write_coco(set, (dir / "annotations.json").string());
            res.set_content(formats::coco_to_json(set).dump(), "application/json");
        } else if (format == "yolo") {
            const auto set = current_set();
            json files = json::object();
            std::string classes;
            for (const auto& c : categories)
                classes += c.name + "\n";
            fs::create_directories(dir / "yolo");
            write_text_file((dir / "yolo" / "classes.txt").string(), classes);
            for (const auto& im : set.images) {
                std::string text;
                for (const auto& line : formats::coco_to_yolo(set, im))
                    text += line + "\n";
                const std::string name = fs::path(im.file_name).stem().string() + ".txt";
                write_text_file((dir / "yolo" / name).string(), text);
                files[name] = text;
            }
            res.set_content(json{{"classes", classes}, {"files", files}}.dump(), "application/json");
        } else if (format == "gcp_list") {
            json rec;
            {
                std::lock_guard g(gcp_lock);
                rec = load_gcps();
            }
            std::vector<formats::GcpEntry> entries;
            formats::ImageDims dims;
            for (const auto& m : rec["marks"]) {
                if (!m.value("confirmed", false))
                    continue;
                formats::GcpEntry e;
                e.geo_x = m["geo_x"].get<double>();
                e.geo_y = m["geo_y"].get<double>();
                e.geo_z = m["geo_z"].get<double>();
                e.im_x = m["im_x"].get<double>();
                e.im_y = m["im_y"].get<double>();
                e.image_name = m["image_name"].get<std::string>();
                e.gcp_id = m["gcp_id"].get<std::string>();
                entries.push_back(e);
                if (const auto* im = initial_image(e.image_name))
                    dims[e.image_name] = {im->width, im->height};
            }
            std::optional<Crs> crs = opts.crs;
            if (!crs && !gcps.empty())
                crs = Crs::utm(gcps.front().pos.zone, gcps.front().pos.hemisphere);
            if (!crs)
                throw HttpError(422, "gcp_list export needs a CRS (set crs or load a GCP file)");
            const std::string path = (dir / "gcp_list.txt").string();
            try {
                assemble_gcp_list(entries, formats::gcp_projection_line(*crs), path, dims);
            } catch (const InvalidArgument& e) {
                throw HttpError(422, e.what());
            }
            res.set_content(read_text_file(path), "text/plain");
        } else {
            throw HttpError(400, "format must be coco, yolo or gcp_list");
        }
    }

    void routes()
    {
        using Req = httplib::Request;
        using Res = httplib::Response;
        auto send = [](Res& res, const json& j) { res.set_content(j.dump(), "application/json"); };

        http.set_exception_handler([](const Req&, Res& res, std::exception_ptr ep) {
            int status = 500;
            std::string msg = "unknown error";
            try {
                std::rethrow_exception(ep);
            } catch (const HttpError& e) {
                status = e.status;
                msg = e.what();
            } catch (const InvalidArgument& e) {
                status = 400;
                msg = e.what();
            } catch (const std::exception& e) {
                msg = e.what();
            }
            if (status >= 500)
                spdlog::error("serve: {}", msg);
            res.status = status;
            res.set_content(json{{"error", msg}}.dump(), "application/json");
        });

        http.Get("/", [](const Req&, Res& res) { res.set_content(detail::kIndexHtml, "text/html"); });
        http.Get("/api/v1", [&](const Req&, Res& res) {
            send(res, {{"api", "v1"}, {"images", images.size()}, {"categories", categories.size()}});
        });
        http.Get("/api/v1/images", [&](const Req&, Res& res) {
            json out = json::array();
            for (const auto& im : images)
                out.push_back({{"id", im.id}, {"file_name", im.file_name}, {"width", im.width}, {"height", im.height}});
            send(res, out);
        });
        http.Get(R"(/api/v1/images/([^/]+)/file)", [&](const Req& req, Res& res) {
            const auto& im = image(req.matches[1]);
            const auto bytes = read_binary_file((fs::path(opts.images_dir) / im.file_name).string());
            res.set_content(std::string(bytes.begin(), bytes.end()), "image/jpeg");
        });
        http.Get(R"(/api/v1/images/([^/]+)/annotations)", [&](const Req& req, Res& res) {
            const auto& im = image(req.matches[1]);
            std::lock_guard lock(*image_locks.at(im.id));
            send(res, load_annotations(im));
        });
        http.Post(R"(/api/v1/images/([^/]+)/annotations)", [&](const Req& req, Res& res) {
            send(res, save_annotations(image(req.matches[1]), parse_body(req)));
        });
        http.Get("/api/v1/categories", [&](const Req&, Res& res) {
            json out = json::array();
            for (const auto& c : categories)
                out.push_back({{"id", c.id}, {"name", c.name}});
            send(res, out);
        });
        http.Get("/api/v1/gcps", [&](const Req&, Res& res) {
            json rec;
            {
                std::lock_guard lock(gcp_lock);
                rec = load_gcps();
            }
            json points = json::array();
            for (const auto& g : gcps)
                points.push_back({{"gcp_id", g.name}, {"easting", g.pos.easting}, {"northing", g.pos.northing},
                                  {"elevation", g.elevation}, {"zone", g.pos.zone}});
            rec["points"] = points;
            send(res, rec);
        });
        http.Post("/api/v1/gcps", [&](const Req& req, Res& res) { send(res, save_gcps(parse_body(req))); });
        http.Get("/api/v1/gcps/candidates", [&](const Req& req, Res& res) {
            if (!req.has_param("gcp"))
                throw HttpError(400, "missing gcp parameter");
            send(res, candidates(req.get_param_value("gcp")));
        });
        http.Get("/api/v1/projection/preview", [&](const Req& req, Res& res) {
            send(res, preview(req.has_param("image") ? req.get_param_value("image") : std::string()));
        });
        http.Post("/api/v1/export", [&](const Req& req, Res& res) {
            export_to(req.has_param("format") ? req.get_param_value("format") : std::string(), res);
        });
    }
};

Service::Service(ServeOptions opts) : impl_(std::make_unique<Impl>(std::move(opts))) {}

Service::~Service()
{
    stop();
}

int Service::bind()
{
    if (impl_->opts.port == 0) {
        impl_->port = impl_->http.bind_to_any_port(impl_->opts.host);
        if (impl_->port < 0)
            throw Error("cannot bind to " + impl_->opts.host);
    } else {
        if (!impl_->http.bind_to_port(impl_->opts.host, impl_->opts.port))
            throw Error("port " + std::to_string(impl_->opts.port) + " on " + impl_->opts.host
                        + " is busy or not permitted");
        impl_->port = impl_->opts.port;
    }
    return impl_->port;
}

void Service::run()
{
    {
        std::lock_guard lock(impl_->run_lock);
        if (impl_->stopped)
            return;
        impl_->started = true;
    }
    spdlog::info("serving {} images on http://{}:{}/", impl_->images.size(), impl_->opts.host, impl_->port);
    impl_->http.listen_after_bind();
}

void Service::stop()
{
    if (!impl_)
        return;
    {
        std::lock_guard lock(impl_->run_lock);
        const bool again = impl_->stopped;
        impl_->stopped = true;
        if (!impl_->started || again)
            return;
    }
    // stop() before the accept loop is up would be lost.
    impl_->http.wait_until_ready();
    impl_->http.stop();
}

}  // namespace orthotrace::pipeline
