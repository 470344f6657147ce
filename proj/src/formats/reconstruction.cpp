#include "orthotrace/formats/reconstruction.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "orthotrace/error.hpp"
#include "orthotrace/io.hpp"
#include "orthotrace/number_format.hpp"

namespace orthotrace::formats {

using nlohmann::json;

namespace {

Eigen::Vector3d vec3(const json& obj, const char* key, const std::string& where)
{
    if (!obj.contains(key))
        throw ParseError(where + ": missing '" + key + "'");
    const auto& a = obj.at(key);
    if (!a.is_array() || a.size() != 3 || !a[0].is_number() || !a[1].is_number() || !a[2].is_number())
        throw ParseError(where + ": '" + key + "' must be three numbers");
    return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

double number(const json& obj, const char* key, const std::string& where)
{
    if (!obj.contains(key) || !obj.at(key).is_number())
        throw ParseError(where + ": missing or non-numeric '" + key + "'");
    return obj.at(key).get<double>();
}

}  // namespace

const CameraIntrinsics& Reconstruction::camera_for(const ShotPose& shot) const
{
    auto it = cameras.find(shot.camera_key);
    if (it == cameras.end())
        throw InvalidArgument("shot " + shot.image_name + " references unknown camera " + shot.camera_key);
    return it->second;
}

const ShotPose* Reconstruction::find_shot(const std::string& image_name) const
{
    auto it = std::lower_bound(shots.begin(), shots.end(), image_name,
                               [](const ShotPose& s, const std::string& n) { return s.image_name < n; });
    return it != shots.end() && it->image_name == image_name ? &*it : nullptr;
}

Reconstruction parse_reconstruction(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("reconstruction: invalid JSON: ") + e.what());
    }
    if (!j.is_array() || j.empty() || !j[0].is_object())
        throw ParseError("reconstruction: expected a non-empty top-level list of reconstructions");
    const json& r0 = j[0];
    if (!r0.contains("cameras") || !r0.at("cameras").is_object())
        throw ParseError("reconstruction: missing 'cameras'");
    if (!r0.contains("shots") || !r0.at("shots").is_object())
        throw ParseError("reconstruction: missing 'shots'");

    Reconstruction rec;
    for (auto it = r0.at("cameras").begin(); it != r0.at("cameras").end(); ++it) {
        const std::string where = "camera '" + it.key() + "'";
        const json& c = it.value();
        CameraIntrinsics cam;
        cam.key = it.key();
        cam.projection_type = c.value("projection_type", std::string("perspective"));
        if (cam.projection_type != "perspective")
            throw ParseError(where + ": projection type '" + cam.projection_type
                             + "' is not supported (only 'perspective' cameras on undistorted imagery)");
        cam.focal = number(c, "focal", where);
        cam.k1 = c.value("k1", 0.0);
        cam.k2 = c.value("k2", 0.0);
        cam.width = static_cast<int>(number(c, "width", where));
        cam.height = static_cast<int>(number(c, "height", where));
        if (!(cam.focal > 0) || cam.width <= 0 || cam.height <= 0)
            throw ParseError(where + ": focal, width and height must be positive");
        if (cam.has_distortion()) {
            rec.warnings.push_back(where + ": distortion ignored for undistorted imagery (k1=" + format_shortest(cam.k1)
                                   + ", k2=" + format_shortest(cam.k2) + ")");
            spdlog::warn("{}", rec.warnings.back());
        }
        rec.cameras.emplace(cam.key, cam);
    }

    for (auto it = r0.at("shots").begin(); it != r0.at("shots").end(); ++it) {
        const std::string where = "shot '" + it.key() + "'";
        const json& s = it.value();
        ShotPose pose;
        pose.image_name = it.key();
        pose.rotation = vec3(s, "rotation", where);
        pose.translation = vec3(s, "translation", where);
        if (!s.contains("camera") || !s.at("camera").is_string())
            throw ParseError(where + ": missing 'camera'");
        pose.camera_key = s.at("camera").get<std::string>();
        if (!rec.cameras.count(pose.camera_key))
            throw ParseError(where + ": unknown camera '" + pose.camera_key + "'");
        if (!pose.rotation.allFinite() || !pose.translation.allFinite())
            throw ParseError(where + ": non-finite pose");
        if (pose.rotation.norm() > std::numbers::pi + 1e-6)
            throw ParseError(where + ": rotation magnitude exceeds pi");
        rec.shots.push_back(std::move(pose));
    }
    std::sort(rec.shots.begin(), rec.shots.end(),
              [](const ShotPose& a, const ShotPose& b) { return a.image_name < b.image_name; });
    return rec;
}

Reconstruction read_reconstruction(const std::string& path)
{
    try {
        return parse_reconstruction(read_text_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

std::string reconstruction_to_json(const Reconstruction& r)
{
    json cams = json::object(), shots = json::object();
    for (const auto& [key, c] : r.cameras)
        cams[key] = {{"projection_type", c.projection_type}, {"focal", c.focal}, {"k1", c.k1},
                     {"k2", c.k2}, {"width", c.width}, {"height", c.height}};
    for (const auto& s : r.shots)
        shots[s.image_name] = {{"rotation", {s.rotation.x(), s.rotation.y(), s.rotation.z()}},
                               {"translation", {s.translation.x(), s.translation.y(), s.translation.z()}},
                               {"camera", s.camera_key}};
    return json::array({{{"cameras", cams}, {"shots", shots}}}).dump(1) + "\n";
}

void write_reconstruction(const Reconstruction& r, const std::string& path)
{
    write_text_file(path, reconstruction_to_json(r));
}

}  // namespace orthotrace::formats
