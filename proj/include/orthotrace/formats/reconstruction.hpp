#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace orthotrace::formats {

struct CameraIntrinsics {
    std::string key;
    std::string projection_type = "perspective";
    double focal = 1.0;  // fraction of max(width, height)
    double k1 = 0;
    double k2 = 0;
    int width = 0;
    int height = 0;

    bool has_distortion() const { return k1 != 0 || k2 != 0; }
    double focal_px() const { return focal * (width > height ? width : height); }
};

struct ShotPose {
    std::string image_name;
    Eigen::Vector3d rotation = Eigen::Vector3d::Zero();     // axis-angle, world to camera
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();  // world to camera
    std::string camera_key;
};

struct Reconstruction {
    std::map<std::string, CameraIntrinsics> cameras;
    std::vector<ShotPose> shots;  // sorted by image name
    std::vector<std::string> warnings;

    const CameraIntrinsics& camera_for(const ShotPose& shot) const;
    const ShotPose* find_shot(const std::string& image_name) const;
};

/// Reads the first reconstruction of an OpenSfM-style reconstruction.json.
/// Only perspective cameras are accepted; nonzero k1/k2 are kept but flagged
/// in `warnings` because inputs are expected to be undistorted.
Reconstruction read_reconstruction(const std::string& path);
Reconstruction parse_reconstruction(const std::string& text);

std::string reconstruction_to_json(const Reconstruction& r);
void write_reconstruction(const Reconstruction& r, const std::string& path);

}  // namespace orthotrace::formats
