#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthotrace/error.hpp"

namespace orthotrace::pipeline {

/// Configuration or command-line parameter error. The message starts with
/// the origin ("project.yaml:12" or "command line") and the offending key.
class ConfigError : public Error {
public:
    using Error::Error;
};

enum class ParamKind { String, Number, Integer, Bool, InputFile, InputDir, NumberList, StringList };

struct ParamSpec {
    std::string key;
    ParamKind kind = ParamKind::String;
    bool required = false;
    nlohmann::json fallback;  // null: no default
    std::string help;
};

/// Unvalidated parameters of one stage as read from a config section or the
/// command line.
struct RawParams {
    nlohmann::json values = nlohmann::json::object();
    std::map<std::string, int> lines;  // 1-based line of each key, when known
    std::string origin = "command line";
    std::string section;   // "tile", or empty for the command line
    int section_line = 0;
    std::string base_dir;  // relative paths resolve against this
};

/// Checks keys, types and input paths; fills defaults. Input paths come back
/// absolute and normalized.
nlohmann::json validate_params(const std::vector<ParamSpec>& specs, const RawParams& raw);

/// Parsed project file: top-level settings plus one raw section per stage,
/// keyed by stage name with dashes turned into underscores.
struct PipelineConfig {
    std::string path;
    std::string dir;
    std::string workdir;  // absolute
    int threads = 0;
    std::map<std::string, RawParams> sections;
    std::vector<std::string> order;  // sections in file order
};

/// Reads a YAML project file. Syntax errors, unknown top-level keys and
/// non-mapping stage sections raise ConfigError with the line number.
PipelineConfig load_config(const std::string& path);

/// "gps-embed" -> "gps_embed".
std::string normalize_stage_name(const std::string& name);

}  // namespace orthotrace::pipeline
