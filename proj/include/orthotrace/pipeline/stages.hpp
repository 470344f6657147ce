#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthotrace/geodesy.hpp"
#include "orthotrace/pipeline/config.hpp"

namespace orthotrace::pipeline {

/// Where a stage writes. In directory mode every output goes under
/// `out_dir` with its default name. In file mode (`--out result.csv`) the
/// primary output takes the given name and the others are prefixed with
/// its stem. An empty out_dir means the stage reports only.
class StageContext {
public:
    StageContext(nlohmann::json params, std::string out_dir, std::string primary_file = {});

    const nlohmann::json& params() const { return params_; }
    bool has_output() const { return !out_dir_.empty(); }
    const std::string& out_dir() const { return out_dir_; }

    /// Path for an output; records it for the manifest and creates parent
    /// directories. `name` may contain subdirectories.
    std::string output(const std::string& name);
    /// The primary output path (the stage's default name in directory mode).
    std::string primary(const std::string& default_name);
    /// Records files written by a helper that picks its own names.
    void record(const std::string& path);

    const std::vector<std::string>& written() const { return written_; }

private:
    nlohmann::json params_;
    std::string out_dir_;
    std::string primary_file_;
    std::vector<std::string> written_;
};

using StageFn = std::function<nlohmann::json(StageContext&)>;

struct StageSpec {
    std::string name;  // config section name; the CLI uses dashes
    std::string help;
    std::vector<ParamSpec> params;
    bool needs_output = true;
    StageFn run;  // empty for the long-running service
};

/// Batch stages in pipeline order, followed by `serve`.
const std::vector<StageSpec>& stage_specs();
/// Throws InvalidArgument naming the known stages.
const StageSpec& find_stage(const std::string& name);

/// Reads an orthomosaic georeference from a world file (.tfw, .jgw, .wld,
/// ...) or from a raster (.tif, .asc).
AffineGeotransform read_ortho_geotransform(const std::string& path);

/// SHA-256 of a file, or for a directory of the sorted (path, hash) list of
/// the files below it.
std::string hash_path(const std::string& path);

struct StageResult {
    std::string stage;
    nlohmann::json report;
    std::string manifest_path;
    double seconds = 0;
};

/// Runs a stage and writes its report and manifest. `base_dir` is where
/// relative input paths in the manifest are measured from. In directory
/// mode the report goes to out_dir/report.json and the manifest to
/// out_dir/manifest.json; in file mode the manifest sits next to the
/// primary output as <file>.manifest.json.
StageResult execute_stage(const StageSpec& stage, const nlohmann::json& params, StageContext& ctx,
                          const std::string& base_dir, const std::string& manifest_path);

/// Runs one configured stage into <workdir>/<stage>/, replacing what was
/// there. Wall time goes to <workdir>/<stage>.timing.json so the manifest
/// stays byte-identical across runs.
StageResult run_stage(const std::string& config_path, const std::string& stage);
StageResult run_stage(const PipelineConfig& cfg, const std::string& stage);

/// Every configured batch stage in pipeline order.
std::vector<StageResult> run_pipeline(const std::string& config_path);

}  // namespace orthotrace::pipeline
