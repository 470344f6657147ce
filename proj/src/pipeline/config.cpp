#include "orthotrace/pipeline/config.hpp"

#include <algorithm>
#include <filesystem>
#include <cmath>
#include <optional>
#include <set>

#include <yaml-cpp/yaml.h>

#include "orthotrace/number_format.hpp"

namespace fs = std::filesystem;

namespace orthotrace::pipeline {

namespace {

const std::set<std::string> kTopLevel{"workdir", "threads"};

std::string where(const RawParams& raw, const std::string& key)
{
    std::string out = raw.origin;
    auto it = raw.lines.find(key);
    const int line = it != raw.lines.end() ? it->second : raw.section_line;
    if (line > 0)
        out += ":" + std::to_string(line);
    out += ": ";
    out += raw.section.empty() ? "--" + key : raw.section + "." + key;
    return out;
}

[[noreturn]] void fail(const RawParams& raw, const std::string& key, const std::string& msg)
{
    throw ConfigError(where(raw, key) + ": " + msg);
}

const char* kind_name(ParamKind k)
{
    switch (k) {
    case ParamKind::String: return "a string";
    case ParamKind::Number: return "a number";
    case ParamKind::Integer: return "an integer";
    case ParamKind::Bool: return "true or false";
    case ParamKind::InputFile: return "an existing file";
    case ParamKind::InputDir: return "an existing directory";
    case ParamKind::NumberList: return "a list of numbers";
    case ParamKind::StringList: return "a list of strings";
    }
    return "";
}

// Command-line values arrive as strings; YAML plain scalars arrive typed.
std::optional<double> as_number(const nlohmann::json& v)
{
    if (v.is_number())
        return v.get<double>();
    if (v.is_string()) {
        try {
            return parse_double(v.get<std::string>());
        } catch (const ParseError&) {
        }
    }
    return std::nullopt;
}

nlohmann::json check_value(const ParamSpec& spec, const nlohmann::json& v, const RawParams& raw)
{
    auto bad = [&]() -> nlohmann::json { fail(raw, spec.key, std::string("expected ") + kind_name(spec.kind)); };
    switch (spec.kind) {
    case ParamKind::String:
        if (v.is_string())
            return v;
        if (v.is_number() || v.is_boolean())
            return v.dump();
        return bad();
    case ParamKind::Number: {
        auto d = as_number(v);
        if (!d || !std::isfinite(*d))
            return bad();
        return *d;
    }
    case ParamKind::Integer: {
        auto d = as_number(v);
        if (!d || std::floor(*d) != *d || std::abs(*d) > 9.0e15)
            return bad();
        return static_cast<int64_t>(*d);
    }
    case ParamKind::Bool:
        if (v.is_boolean())
            return v;
        if (v.is_string()) {
            const auto s = v.get<std::string>();
            if (s == "true" || s == "1" || s == "yes")
                return true;
            if (s == "false" || s == "0" || s == "no")
                return false;
        }
        return bad();
    case ParamKind::InputFile:
    case ParamKind::InputDir: {
        if (!v.is_string() || v.get<std::string>().empty())
            return bad();
        fs::path p(v.get<std::string>());
        if (p.is_relative())
            p = fs::path(raw.base_dir) / p;
        p = p.lexically_normal();
        const bool want_dir = spec.kind == ParamKind::InputDir;
        if (!fs::exists(p))
            fail(raw, spec.key, (want_dir ? "directory not found: " : "file not found: ") + p.string());
        if (want_dir != fs::is_directory(p))
            fail(raw, spec.key, (want_dir ? "not a directory: " : "is a directory: ") + p.string());
        return p.string();
    }
    case ParamKind::NumberList:
    case ParamKind::StringList: {
        nlohmann::json items = v;
        if (v.is_string()) {
            // Comma-separated on the command line.
            items = nlohmann::json::array();
            std::string s = v.get<std::string>();
            size_t start = 0;
            while (start <= s.size()) {
                size_t end = std::min(s.find(',', start), s.size());
                std::string part = s.substr(start, end - start);
                part.erase(0, part.find_first_not_of(' '));
                part.erase(part.find_last_not_of(' ') + 1);
                if (!part.empty())
                    items.push_back(part);
                start = end + 1;
            }
        }
        if (!items.is_array())
            return bad();
        nlohmann::json out = nlohmann::json::array();
        for (const auto& item : items) {
            if (spec.kind == ParamKind::NumberList) {
                auto d = as_number(item);
                if (!d)
                    return bad();
                out.push_back(*d);
            } else {
                if (!item.is_string() && !item.is_number())
                    return bad();
                out.push_back(item.is_string() ? item.get<std::string>() : item.dump());
            }
        }
        return out;
    }
    }
    return bad();
}

nlohmann::json scalar_to_json(const YAML::Node& n)
{
    const std::string& s = n.Scalar();
    if (n.Tag() == "!")  // quoted
        return s;
    if (s.empty() || s == "~" || s == "null" || s == "Null" || s == "NULL")
        return nullptr;
    if (s == "true" || s == "True" || s == "TRUE")
        return true;
    if (s == "false" || s == "False" || s == "FALSE")
        return false;
    try {
        if (s.find_first_of(".eE") == std::string::npos)
            return parse_int(s);
    } catch (const ParseError&) {
    }
    try {
        return parse_double(s);
    } catch (const ParseError&) {
    }
    return s;
}

nlohmann::json yaml_to_json(const YAML::Node& n, const std::string& origin)
{
    switch (n.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
        return nullptr;
    case YAML::NodeType::Scalar:
        return scalar_to_json(n);
    case YAML::NodeType::Sequence: {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& item : n)
            a.push_back(yaml_to_json(item, origin));
        return a;
    }
    case YAML::NodeType::Map:
        throw ConfigError(origin + ":" + std::to_string(n.Mark().line + 1)
                          + ": nested mappings are only allowed one level deep (stage sections)");
    }
    return nullptr;
}

}  // namespace

std::string normalize_stage_name(const std::string& name)
{
    std::string s = name;
    std::replace(s.begin(), s.end(), '-', '_');
    return s;
}

nlohmann::json validate_params(const std::vector<ParamSpec>& specs, const RawParams& raw)
{
    for (const auto& [key, value] : raw.values.items()) {
        const bool known = std::any_of(specs.begin(), specs.end(), [&](const ParamSpec& s) { return s.key == key; });
        if (!known) {
            std::string names;
            for (const auto& s : specs)
                names += (names.empty() ? "" : ", ") + s.key;
            fail(raw, key, "unknown key (expected one of: " + names + ")");
        }
    }
    nlohmann::json out = nlohmann::json::object();
    for (const auto& spec : specs) {
        auto it = raw.values.find(spec.key);
        if (it == raw.values.end() || it->is_null()) {
            if (spec.required)
                fail(raw, spec.key, "required key is missing");
            if (!spec.fallback.is_null())
                out[spec.key] = spec.fallback;
            continue;
        }
        out[spec.key] = check_value(spec, *it, raw);
    }
    return out;
}

PipelineConfig load_config(const std::string& path)
{
    PipelineConfig cfg;
    cfg.path = fs::absolute(path).lexically_normal().string();
    cfg.dir = fs::path(cfg.path).parent_path().string();
    YAML::Node root;
    try {
        root = YAML::LoadFile(path);
    } catch (const YAML::BadFile&) {
        throw ConfigError(path + ": cannot open config file");
    } catch (const YAML::ParserException& e) {
        throw ConfigError(path + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
    }
    if (!root.IsMap())
        throw ConfigError(path + ": top level must be a mapping of settings and stage sections");

    cfg.workdir = (fs::path(cfg.dir) / "out").string();
    for (const auto& kv : root) {
        const std::string key = kv.first.as<std::string>();
        const int line = kv.first.Mark().line + 1;
        const std::string at = path + ":" + std::to_string(line) + ": " + key;
        if (kTopLevel.count(key)) {
            if (!kv.second.IsScalar())
                throw ConfigError(at + ": expected a scalar");
            if (key == "workdir") {
                fs::path w(kv.second.Scalar());
                cfg.workdir = (w.is_relative() ? fs::path(cfg.dir) / w : w).lexically_normal().string();
            } else {
                const auto v = scalar_to_json(kv.second);
                if (!v.is_number_integer() || v.get<int64_t>() < 0)
                    throw ConfigError(at + ": expected a non-negative integer");
                cfg.threads = static_cast<int>(v.get<int64_t>());
            }
            continue;
        }
        const std::string stage = normalize_stage_name(key);
        if (!kv.second.IsMap())
            throw ConfigError(at + ": stage section must be a mapping");
        if (cfg.sections.count(stage))
            throw ConfigError(at + ": section appears twice");
        RawParams raw;
        raw.origin = path;
        raw.section = stage;
        raw.section_line = line;
        raw.base_dir = cfg.dir;
        for (const auto& p : kv.second) {
            const std::string pk = p.first.as<std::string>();
            raw.values[pk] = yaml_to_json(p.second, path);
            raw.lines[pk] = p.first.Mark().line + 1;
        }
        cfg.sections[stage] = std::move(raw);
        cfg.order.push_back(stage);
    }
    return cfg;
}

}  // namespace orthotrace::pipeline
