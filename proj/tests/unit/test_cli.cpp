#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "orthotrace/io.hpp"
#include "temp_dir.hpp"
#include "toy_project.hpp"

using orthotrace::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int cli(const fs::path& cwd, const std::string& args)
{
    const std::string cmd = "cd '" + cwd.string() + "' && '" ORTHOTRACE_CLI "' -q " + args + " > cli.out 2> cli.err";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Cli, ExitCodesAndOutputModes)
{
    TempDir dir("cli");
    orthotrace::testing::write_toy_project(dir.path(), 20);
    const auto p = dir.path();

    EXPECT_EQ(cli(p, "--help"), 0);
    EXPECT_EQ(cli(p, "tile --images images"), 2);
    EXPECT_NE(orthotrace::read_text_file((p / "cli.err").string()).find("--coco"), std::string::npos);
    EXPECT_EQ(cli(p, "tile --coco nothere.json --images images --out t"), 2);
    EXPECT_EQ(cli(p, "select-min --reconstruction reconstruction.json"), 2);
    EXPECT_EQ(cli(p, "run project.yaml detect"), 2);
    EXPECT_EQ(cli(p, "frobnicate"), 2);
    EXPECT_EQ(cli(p, "project --detections annotations.json --reconstruction reconstruction.json --dsm dsm.asc "
                     "--ortho-geotransform ortho.tfw --interpolation cubic --out pr"),
              2);
    EXPECT_EQ(cli(p, "merge --detections annotations.json --tile-index gnss.csv --out m"), 1);

    // Directory mode: default names plus manifest and report.
    ASSERT_EQ(cli(p, "tile --coco annotations.json --images images --tile 512 --min-retention 0.5 --out t"), 0);
    EXPECT_TRUE(fs::exists(p / "t/tiles.csv"));
    EXPECT_TRUE(fs::exists(p / "t/manifest.json"));
    EXPECT_TRUE(fs::exists(p / "t/report.json"));

    // File mode: the primary output takes the given name.
    ASSERT_EQ(cli(p, "merge --detections tile_detections.json --tile-index t/tiles.csv --out res/merged.json"), 0);
    EXPECT_TRUE(fs::exists(p / "res/merged.json"));
    const json m = json::parse(orthotrace::read_text_file((p / "res/merged.json.manifest.json").string()));
    EXPECT_EQ(m["outputs"][0]["path"], "merged.json");
    EXPECT_EQ(m["parameters"]["tile_index"], "t/tiles.csv");

    // Report-only stages print to stdout.
    ASSERT_EQ(cli(p, "gcp find --images images --gcps gcps.csv --radius 40"), 0);
    EXPECT_EQ(json::parse(orthotrace::read_text_file((p / "cli.out").string()))["gcps"], 3);

    ASSERT_EQ(cli(p, "run project.yaml gps-embed tile"), 0);
    EXPECT_TRUE(fs::exists(p / "out/gps_embed/manifest.json"));
    EXPECT_TRUE(fs::exists(p / "out/tile/manifest.json"));
    EXPECT_FALSE(fs::exists(p / "out/merge"));
}
