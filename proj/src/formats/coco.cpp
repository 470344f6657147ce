#include "orthotrace/formats/coco.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <iterator>
#include <sstream>

#include "orthotrace/error.hpp"
#include "orthotrace/io.hpp"
#include "orthotrace/number_format.hpp"

namespace orthotrace::formats {

using nlohmann::json;

namespace {

json without(const json& obj, std::initializer_list<const char*> keys)
{
    json out = json::object();
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; }))
            out[it.key()] = it.value();
    }
    return out;
}

int64_t get_id(const json& obj, const char* key, const std::string& where)
{
    if (!obj.contains(key))
        throw ParseError(where + ": missing '" + key + "'");
    const auto& v = obj.at(key);
    if (v.is_number_integer())
        return v.get<int64_t>();
    if (v.is_number_float()) {
        const double d = v.get<double>();
        if (std::floor(d) == d)
            return static_cast<int64_t>(d);
    }
    throw ParseError(where + ": '" + key + "' must be an integer");
}

double get_number(const json& obj, const char* key, const std::string& where)
{
    if (!obj.contains(key) || !obj.at(key).is_number())
        throw ParseError(where + ": missing or non-numeric '" + key + "'");
    return obj.at(key).get<double>();
}

BBox parse_bbox(const json& a, const std::string& where)
{
    if (!a.contains("bbox") || !a.at("bbox").is_array() || a.at("bbox").size() != 4)
        throw ParseError(where + ": 'bbox' must be [x, y, w, h]");
    const auto& b = a.at("bbox");
    for (const auto& v : b)
        if (!v.is_number())
            throw ParseError(where + ": non-numeric bbox value");
    BBox box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    if (box.w < 0 || box.h < 0)
        throw ParseError(where + ": negative bbox dimensions");
    return box;
}

Annotation parse_annotation(const json& a, const std::string& where)
{
    if (!a.is_object())
        throw ParseError(where + ": expected an object");
    Annotation ann;
    ann.image_id = get_id(a, "image_id", where);
    ann.category_id = get_id(a, "category_id", where);
    ann.bbox = parse_bbox(a, where);
    ann.area = ann.bbox.area();
    if (a.contains("score")) {
        if (!a.at("score").is_number())
            throw ParseError(where + ": non-numeric score");
        ann.score = a.at("score").get<double>();
    }
    if (a.contains("provenance")) {
        const auto& p = a.at("provenance");
        ann.provenance = Provenance{get_id(p, "orig_image_id", where), get_id(p, "orig_ann_id", where),
                                    static_cast<int>(get_id(p, "tile_x", where)),
                                    static_cast<int>(get_id(p, "tile_y", where))};
    }
    ann.extra = without(a, {"id", "image_id", "category_id", "bbox", "area", "score", "provenance"});
    return ann;
}

void check(const AnnotationSet& s, bool detections)
{
    std::set<int64_t> image_ids, cat_ids, ann_ids;
    for (const auto& im : s.images) {
        if (!image_ids.insert(im.id).second)
            throw InvalidArgument("duplicate image id " + std::to_string(im.id));
        if (im.width < 0 || im.height < 0)
            throw InvalidArgument("image " + std::to_string(im.id) + " has negative dimensions");
    }
    for (const auto& c : s.categories)
        if (!cat_ids.insert(c.id).second)
            throw InvalidArgument("duplicate category id " + std::to_string(c.id));
    if (s.categories.size() > kMaxCategories)
        throw InvalidArgument("at most " + std::to_string(kMaxCategories) + " categories are supported, got "
                              + std::to_string(s.categories.size()));
    for (const auto& a : s.annotations) {
        const std::string where = "annotation " + std::to_string(a.id);
        if (!ann_ids.insert(a.id).second)
            throw InvalidArgument("duplicate annotation id " + std::to_string(a.id));
        if (!image_ids.count(a.image_id))
            throw InvalidArgument(where + " references unknown image " + std::to_string(a.image_id));
        if (!cat_ids.count(a.category_id))
            throw InvalidArgument(where + " references unknown category " + std::to_string(a.category_id));
        if (!a.bbox.valid())
            throw InvalidArgument(where + " has a non-positive or non-finite box");
        if (a.area != a.bbox.area())
            throw InvalidArgument(where + " area does not equal w*h");
        if (detections) {
            if (!a.score)
                throw InvalidArgument(where + " has no score");
            if (!(*a.score >= 0.0 && *a.score <= 1.0))
                throw InvalidArgument(where + " score outside [0, 1]");
        } else if (a.bbox.x < 0 || a.bbox.y < 0) {
            throw InvalidArgument(where + " lies outside its image");
        }
    }
}

std::string yolo_number(double v)
{
    std::string s = format_shortest(v);
    if (s.find_first_of(".en") == std::string::npos)
        s += ".0";
    return s;
}

std::vector<Category> sorted_categories(std::vector<Category> cats)
{
    std::sort(cats.begin(), cats.end(), [](const Category& a, const Category& b) { return a.id < b.id; });
    return cats;
}

}  // namespace

void AnnotationSet::validate() const
{
    check(*this, false);
}

void AnnotationSet::validate_detections() const
{
    check(*this, true);
}

const ImageInfo* AnnotationSet::find_image(int64_t id) const
{
    for (const auto& im : images)
        if (im.id == id)
            return &im;
    return nullptr;
}

const ImageInfo* AnnotationSet::find_image(const std::string& file_name) const
{
    for (const auto& im : images)
        if (im.file_name == file_name)
            return &im;
    return nullptr;
}

std::vector<const Annotation*> AnnotationSet::annotations_for(int64_t image_id) const
{
    std::vector<const Annotation*> out;
    for (const auto& a : annotations)
        if (a.image_id == image_id)
            out.push_back(&a);
    return out;
}

int64_t AnnotationSet::next_annotation_id() const
{
    int64_t m = 0;
    for (const auto& a : annotations)
        m = std::max(m, a.id);
    return m + 1;
}

AnnotationSet parse_coco(const json& j)
{
    if (!j.is_object())
        throw ParseError("COCO document must be a JSON object");
    AnnotationSet s;
    if (j.contains("images")) {
        size_t i = 0;
        for (const auto& im : j.at("images")) {
            const std::string where = "images[" + std::to_string(i++) + "]";
            ImageInfo info;
            info.id = get_id(im, "id", where);
            info.file_name = im.value("file_name", std::string());
            info.width = static_cast<int>(get_number(im, "width", where));
            info.height = static_cast<int>(get_number(im, "height", where));
            info.extra = without(im, {"id", "file_name", "width", "height"});
            s.images.push_back(std::move(info));
        }
    }
    if (j.contains("categories")) {
        size_t i = 0;
        for (const auto& c : j.at("categories")) {
            const std::string where = "categories[" + std::to_string(i++) + "]";
            Category cat;
            cat.id = get_id(c, "id", where);
            cat.name = c.value("name", std::string());
            cat.extra = without(c, {"id", "name"});
            s.categories.push_back(std::move(cat));
        }
    }
    if (j.contains("annotations")) {
        size_t i = 0;
        for (const auto& a : j.at("annotations")) {
            const std::string where = "annotations[" + std::to_string(i++) + "]";
            Annotation ann = parse_annotation(a, where);
            ann.id = get_id(a, "id", where);
            s.annotations.push_back(std::move(ann));
        }
    }
    s.extra = without(j, {"images", "annotations", "categories"});
    const bool scored = !s.annotations.empty()
                        && std::all_of(s.annotations.begin(), s.annotations.end(),
                                       [](const Annotation& a) { return a.score.has_value(); });
    check(s, scored);
    return s;
}

AnnotationSet read_coco(const std::string& path)
{
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": invalid JSON: " + e.what());
    }
    try {
        return parse_coco(j);
    } catch (const Error& e) {
        throw ParseError(path + ": " + e.what());
    }
}

json coco_to_json(const AnnotationSet& set)
{
    json images = json::array(), anns = json::array(), cats = json::array();
    for (const auto& im : set.images)
        images.push_back({{"id", im.id}, {"file_name", im.file_name}, {"width", im.width}, {"height", im.height}});
    for (const auto& a : set.annotations) {
        json o = {{"id", a.id},
                  {"image_id", a.image_id},
                  {"category_id", a.category_id},
                  {"bbox", {a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h}},
                  {"area", a.area},
                  {"iscrowd", 0}};
        if (a.score)
            o["score"] = *a.score;
        if (a.provenance)
            o["provenance"] = {{"orig_image_id", a.provenance->orig_image_id},
                               {"orig_ann_id", a.provenance->orig_ann_id},
                               {"tile_x", a.provenance->tile_x},
                               {"tile_y", a.provenance->tile_y}};
        anns.push_back(std::move(o));
    }
    for (const auto& c : set.categories)
        cats.push_back({{"id", c.id}, {"name", c.name}});
    return {{"images", images}, {"annotations", anns}, {"categories", cats}};
}

void write_coco(const AnnotationSet& set, const std::string& path)
{
    write_text_file(path, coco_to_json(set).dump(1) + "\n");
}

DetectionSet parse_detections(const json& j, const AnnotationSet* reference)
{
    if (j.is_object()) {
        DetectionSet d = parse_coco(j);
        d.validate_detections();
        return d;
    }
    if (!j.is_array())
        throw ParseError("detections must be a COCO object or a result list");

    DetectionSet d;
    if (reference) {
        d.images = reference->images;
        d.categories = reference->categories;
    }
    std::set<int64_t> seen_images, seen_cats;
    for (const auto& im : d.images)
        seen_images.insert(im.id);
    for (const auto& c : d.categories)
        seen_cats.insert(c.id);
    int64_t next_id = 1;
    size_t i = 0;
    for (const auto& a : j) {
        Annotation ann = parse_annotation(a, "detections[" + std::to_string(i++) + "]");
        ann.id = next_id++;
        if (!reference) {
            if (seen_images.insert(ann.image_id).second)
                d.images.push_back({ann.image_id, "", 0, 0, json::object()});
            if (seen_cats.insert(ann.category_id).second)
                d.categories.push_back({ann.category_id, "class_" + std::to_string(ann.category_id), json::object()});
        }
        d.annotations.push_back(std::move(ann));
    }
    std::sort(d.images.begin(), d.images.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    d.categories = sorted_categories(std::move(d.categories));
    d.validate_detections();
    return d;
}

DetectionSet read_detections(const std::string& path, const AnnotationSet* reference)
{
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": invalid JSON: " + e.what());
    }
    try {
        return parse_detections(j, reference);
    } catch (const Error& e) {
        throw ParseError(path + ": " + e.what());
    }
}

std::vector<std::string> coco_to_yolo(const AnnotationSet& set, const ImageInfo& image)
{
    if (image.width <= 0 || image.height <= 0)
        throw InvalidArgument("image " + image.file_name + " has no dimensions");
    const auto cats = sorted_categories(set.categories);
    std::vector<std::string> lines;
    for (const auto* a : set.annotations_for(image.id)) {
        const auto it = std::find_if(cats.begin(), cats.end(), [&](const Category& c) { return c.id == a->category_id; });
        if (it == cats.end())
            throw InvalidArgument("annotation " + std::to_string(a->id) + " references unknown category");
        const double W = image.width, H = image.height;
        const double cx = (a->bbox.x + a->bbox.w / 2) / W;
        const double cy = (a->bbox.y + a->bbox.h / 2) / H;
        lines.push_back(std::to_string(it - cats.begin()) + " " + yolo_number(cx) + " " + yolo_number(cy) + " "
                        + yolo_number(a->bbox.w / W) + " " + yolo_number(a->bbox.h / H));
    }
    return lines;
}

AnnotationSet yolo_to_coco(const std::vector<std::string>& lines, const ImageInfo& image,
                           const std::vector<Category>& categories, int64_t first_id)
{
    if (image.width <= 0 || image.height <= 0)
        throw InvalidArgument("image " + image.file_name + " has no dimensions");
    AnnotationSet s;
    s.images = {image};
    s.categories = sorted_categories(categories);
    int64_t id = first_id;
    int lineno = 0;
    for (const auto& line : lines) {
        ++lineno;
        std::istringstream in(line);
        std::vector<std::string> tok{std::istream_iterator<std::string>(in), std::istream_iterator<std::string>()};
        if (tok.empty())
            continue;
        if (tok.size() != 5)
            throw ParseError("YOLO line must have 5 fields", lineno);
        const long long cls = parse_int(tok[0]);
        if (cls < 0 || cls >= static_cast<long long>(s.categories.size()))
            throw ParseError("YOLO class index " + tok[0] + " out of range", lineno);
        const double cx = parse_double(tok[1]), cy = parse_double(tok[2]);
        const double w = parse_double(tok[3]), h = parse_double(tok[4]);
        if (!(w > 0 && h > 0))
            throw ParseError("YOLO box has non-positive size", lineno);
        Annotation a;
        a.id = id++;
        a.image_id = image.id;
        a.category_id = s.categories[static_cast<size_t>(cls)].id;
        a.bbox = {(cx - w / 2) * image.width, (cy - h / 2) * image.height, w * image.width, h * image.height};
        a.area = a.bbox.area();
        s.annotations.push_back(std::move(a));
    }
    return s;
}

}  // namespace orthotrace::formats
