#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthotrace/bbox.hpp"

namespace orthotrace::formats {

inline constexpr size_t kMaxCategories = 5;

struct ImageInfo {
    int64_t id = 0;
    std::string file_name;
    int width = 0;
    int height = 0;
    nlohmann::json extra = nlohmann::json::object();
};

struct Category {
    int64_t id = 0;
    std::string name;
    nlohmann::json extra = nlohmann::json::object();
};

/// Back-link from a tile annotation to the box it was cut from.
struct Provenance {
    int64_t orig_image_id = 0;
    int64_t orig_ann_id = 0;
    int tile_x = 0;
    int tile_y = 0;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct Annotation {
    int64_t id = 0;
    int64_t image_id = 0;
    int64_t category_id = 0;
    BBox bbox;
    double area = 0;
    std::optional<double> score;  // detections only
    std::optional<Provenance> provenance;
    nlohmann::json extra = nlohmann::json::object();
};

/// COCO image/annotation/category triple. Detection files use the same
/// structure with a score on every annotation.
struct AnnotationSet {
    std::vector<ImageInfo> images;
    std::vector<Annotation> annotations;
    std::vector<Category> categories;
    nlohmann::json extra = nlohmann::json::object();

    /// Unique ids, intact image/category references, positive box sizes,
    /// area == w*h and at most five categories. Throws InvalidArgument.
    void validate() const;
    /// validate() plus a score in [0, 1] on every annotation.
    void validate_detections() const;

    const ImageInfo* find_image(int64_t id) const;
    const ImageInfo* find_image(const std::string& file_name) const;
    std::vector<const Annotation*> annotations_for(int64_t image_id) const;
    int64_t next_annotation_id() const;
};

using DetectionSet = AnnotationSet;

/// Unknown keys are kept in `extra` on read and not written back.
AnnotationSet parse_coco(const nlohmann::json& j);
AnnotationSet read_coco(const std::string& path);
nlohmann::json coco_to_json(const AnnotationSet& set);
void write_coco(const AnnotationSet& set, const std::string& path);

/// Detections either as a full COCO document or as the bare result list
/// ([{image_id, category_id, bbox, score}, ...]). For the bare list the
/// images and categories come from `reference` and ids are assigned 1..n.
DetectionSet read_detections(const std::string& path, const AnnotationSet* reference = nullptr);
DetectionSet parse_detections(const nlohmann::json& j, const AnnotationSet* reference = nullptr);

/// YOLO lines (`class cx cy w h`, normalized) for one image. The class index
/// is the category's position in the id-sorted category list.
std::vector<std::string> coco_to_yolo(const AnnotationSet& set, const ImageInfo& image);

/// Inverse of coco_to_yolo. Annotation ids start at `first_id`.
AnnotationSet yolo_to_coco(const std::vector<std::string>& lines, const ImageInfo& image,
                           const std::vector<Category>& categories, int64_t first_id = 1);

}  // namespace orthotrace::formats
