#include <csignal>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "orthotrace/error.hpp"
#include "orthotrace/io.hpp"
#include "orthotrace/parallel.hpp"
#include "orthotrace/pipeline/config.hpp"
#include "orthotrace/pipeline/server.hpp"
#include "orthotrace/pipeline/stages.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace orthotrace;
using namespace orthotrace::pipeline;

namespace {

constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

std::string dashed(std::string key)
{
    for (char& c : key)
        if (c == '_')
            c = '-';
    return key;
}

/// Command-line values for one stage, filled by CLI11 callbacks.
struct StageArgs {
    const StageSpec* spec = nullptr;
    RawParams raw;
    std::string out;
};

void add_stage_options(CLI::App* cmd, StageArgs& args)
{
    for (const auto& p : args.spec->params) {
        const std::string flag = "--" + dashed(p.key);
        std::string help = p.help;
        if (!p.fallback.is_null())
        {
            std::string shown;
            if (p.fallback.is_string())
                shown = p.fallback.get<std::string>();
            else if (p.fallback.is_array())
                for (const auto& v : p.fallback)
                    shown += (shown.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
            else
                shown = p.fallback.dump();
            help += " [" + shown + "]";
        }
        if (p.kind == ParamKind::Bool) {
            cmd->add_flag_function(flag + ",!--no-" + dashed(p.key),
                                   [&args, key = p.key](int64_t n) { args.raw.values[key] = n > 0 ? "true" : "false"; },
                                   help);
        } else {
            cmd->add_option_function<std::string>(
                flag, [&args, key = p.key](const std::string& v) { args.raw.values[key] = v; }, help);
        }
    }
}

// `--out x.csv` names the primary output; anything else is a directory.
StageContext make_context(const json& params, const std::string& out, std::string& manifest)
{
    if (out.empty()) {
        manifest.clear();
        return StageContext(params, {});
    }
    const fs::path p = fs::absolute(out);
    if (fs::is_directory(p) || !p.has_extension()) {
        fs::create_directories(p);
        manifest = (p / "manifest.json").string();
        return StageContext(params, p.string());
    }
    fs::create_directories(p.parent_path());
    manifest = p.string() + ".manifest.json";
    return StageContext(params, p.parent_path().string(), p.filename().string());
}

int run_cli_stage(StageArgs& args)
{
    args.raw.base_dir = fs::current_path().string();
    const json params = validate_params(args.spec->params, args.raw);
    std::string manifest;
    StageContext ctx = make_context(params, args.out, manifest);
    const StageResult res = execute_stage(*args.spec, params, ctx, args.raw.base_dir, manifest);
    if (manifest.ends_with("/manifest.json"))
        write_text_file((fs::path(ctx.out_dir()) / "report.json").string(), res.report.dump(2) + "\n");
    std::cout << res.report.dump(2) << "\n";
    spdlog::info("{} finished in {:.2f} s", args.spec->name, res.seconds);
    return 0;
}

std::unique_ptr<Service> g_service;

void on_signal(int)
{
    if (g_service)
        g_service->stop();
}

int run_serve(StageArgs& args, const std::string& config_path)
{
    RawParams raw = args.raw;
    raw.base_dir = fs::current_path().string();
    std::string default_data = (fs::current_path() / "orthotrace_serve").string();
    if (!config_path.empty()) {
        const PipelineConfig cfg = load_config(config_path);
        default_data = (fs::path(cfg.workdir) / "serve").string();
        auto it = cfg.sections.find("serve");
        if (it != cfg.sections.end()) {
            // Config values first, command-line flags override them.
            RawParams merged = it->second;
            for (auto& [k, v] : args.raw.values.items()) {
                merged.values[k] = v;
                merged.lines.erase(k);
            }
            for (const auto& p : args.spec->params)
                if ((p.kind == ParamKind::InputFile || p.kind == ParamKind::InputDir) && args.raw.values.contains(p.key))
                    merged.values[p.key] = fs::absolute(args.raw.values[p.key].get<std::string>()).string();
            raw = merged;
        }
    }
    const json params = validate_params(args.spec->params, raw);
    g_service = std::make_unique<Service>(ServeOptions::from_params(params, default_data));
    const int port = g_service->bind();
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "listening on http://" << params.at("host").get<std::string>() << ":" << port << "/" << std::endl;
    g_service->run();
    g_service.reset();
    return 0;
}

int run_config(const std::string& config, const std::vector<std::string>& stages)
{
    if (stages.empty()) {
        for (const auto& r : run_pipeline(config))
            std::cout << r.stage << ": " << r.manifest_path << "\n";
        return 0;
    }
    const PipelineConfig cfg = load_config(config);
    for (const auto& s : stages) {
        const StageResult r = run_stage(cfg, s);
        std::cout << r.stage << ": " << r.manifest_path << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"UAV plant phenotyping pipeline: GNSS tagging, GCP selection, tiling, "
                 "evaluation, detection projection and trait extraction"};
    app.require_subcommand(1);
    int threads = 0;
    int verbosity = 0;
    bool quiet = false;
    app.add_option("--threads", threads, "worker threads (0: one per core)")->check(CLI::NonNegativeNumber);
    app.add_flag("-v,--verbose", verbosity, "more logging (repeat for debug)");
    app.add_flag("-q,--quiet", quiet, "errors only");

    std::map<std::string, StageArgs> args;
    std::map<std::string, CLI::App*> commands;
    for (const auto& spec : stage_specs()) {
        StageArgs& a = args[spec.name];
        a.spec = &spec;
        CLI::App* cmd = app.add_subcommand(dashed(spec.name), spec.help);
        add_stage_options(cmd, a);
        if (spec.run)
            cmd->add_option("-o,--out", a.out, "output directory, or file for the primary output");
        commands[spec.name] = cmd;
    }
    // `gcp find` is the same operation spelled as in the GCP workflow docs.
    StageArgs gcp_find{&find_stage("gcp"), {}, {}};
    CLI::App* find_cmd = commands["gcp"]->add_subcommand("find", "List candidate images per GCP");
    add_stage_options(find_cmd, gcp_find);
    find_cmd->add_option("-o,--out", gcp_find.out, "output directory, or file for the primary output");

    std::string serve_config;
    commands["serve"]->add_option("-c,--config", serve_config, "project file with a serve section")
        ->check(CLI::ExistingFile);

    std::string run_config_path;
    std::vector<std::string> run_stages;
    CLI::App* run_cmd = app.add_subcommand("run", "Run stages of a project file into its workdir");
    run_cmd->alias("run-stage");
    run_cmd->alias("run_stage");
    run_cmd->add_option("config", run_config_path, "project file (YAML)")->required()->check(CLI::ExistingFile);
    run_cmd->add_option("stages", run_stages, "stages to run (default: every configured stage)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    // stdout carries reports; logs go to stderr.
    spdlog::set_default_logger(spdlog::stderr_color_mt("orthotrace"));
    spdlog::set_level(quiet ? spdlog::level::err
                            : verbosity >= 2 ? spdlog::level::debug
                            : verbosity == 1 ? spdlog::level::info
                                             : spdlog::level::warn);
    if (threads > 0)
        parallel_threads() = static_cast<unsigned>(threads);

    try {
        if (run_cmd->parsed())
            return run_config(run_config_path, run_stages);
        if (find_cmd->parsed())
            return run_cli_stage(gcp_find);
        if (commands["serve"]->parsed())
            return run_serve(args["serve"], serve_config);
        for (auto& [name, cmd] : commands)
            if (cmd->parsed())
                return run_cli_stage(args[name]);
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return kUsageError;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kRuntimeError;
    }
    return kUsageError;
}
