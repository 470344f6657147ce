#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthotrace/geodesy.hpp"

namespace orthotrace::pipeline {

struct ServeOptions {
    std::string images_dir;
    std::string data_dir;  // saved annotations, GCP marks and exports
    std::optional<std::string> annotations;  // initial COCO
    std::vector<std::string> categories{"plant"};
    std::optional<std::string> gcps;  // GCP coordinate CSV
    double radius = 30.0;
    std::optional<Crs> crs;
    std::optional<std::string> projections;  // projection CSV
    std::optional<std::string> manual;       // orthomosaic COCO
    std::string host = "127.0.0.1";
    int port = 8080;

    /// From validated `serve` parameters.
    static ServeOptions from_params(const nlohmann::json& params, const std::string& default_data_dir);
};

/// JSON API under /api/v1 plus the embedded browser page at /. Saved state
/// is written with write-temp-rename; writes to one file are serialized and
/// the last write wins, bumping the file's version counter.
class Service {
public:
    explicit Service(ServeOptions opts);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds the listening socket and returns the port (useful with port 0).
    /// Throws Error when the port is taken.
    int bind();
    /// Serves until stop(); bind() first.
    void run();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace orthotrace::pipeline
