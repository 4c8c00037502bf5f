#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "abseg/cli.hpp"
#include "abseg/config.hpp"
#include "abseg/synthdata.hpp"
#include "abseg/volume_io.hpp"
#include "test_util.hpp"

using namespace abseg;
namespace fs = std::filesystem;

namespace {
std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}
}  // namespace

TEST_CASE("cli rejects unknown subcommands and flags") {
    CHECK(cli::run({"frobnicate"}) != 0);
    CHECK(cli::run({}) != 0);
    CHECK(cli::run({"synth", "--definitely-not-a-flag"}) != 0);
}

TEST_CASE("cli synth writes a loadable dataset") {
    TempDir td("clisynth");
    CHECK(cli::run({"synth", "--out", td.str("data"), "--cases", "2", "--size", "16", "--seed", "4"}) ==
          0);
    const auto m = volume_io::load_manifest(td.str("data/manifest.json"));
    CHECK(m.train_entries().size() == 2);
    CHECK(m.num_classes == 4);
}

TEST_CASE("run config round trip and preset expansion") {
    config::RunConfig cfg;
    cfg.task = "task2";
    cfg.manifest_path = "manifest.json";
    cfg.training.epochs = 3;
    cfg.patch = {16, 16, 16};
    cfg.network.levels = 2;
    cfg.network.blocks_per_level = {1, 1};
    cfg.network.filters_per_level = {4, 8};
    cfg.network.downsample_strides = {{2, 2, 2}};
    cfg.network.deep_supervision_levels = 1;
    cfg.expand(4);
    CHECK(cfg.num_classes == 4);
    CHECK(cfg.tta.allowed == std::array<bool, 3>{false, true, true});
    CHECK(cfg.augmentation.mirror_axes == cfg.tta.allowed);  // one source of truth

    const std::string text = config::dump_run_config(cfg);
    const auto back = config::parse_run_config(text);
    CHECK(back.task == "task2");
    CHECK(back.num_classes == 4);
    CHECK(back.patch == cfg.patch);
    CHECK(back.training.epochs == 3);
    CHECK(back.network.filters_per_level == cfg.network.filters_per_level);
    CHECK(back.tta.allowed == cfg.tta.allowed);

    config::RunConfig task1;
    task1.task = "task1";
    task1.expand(2);
    CHECK(task1.tta.allowed == std::array<bool, 3>{true, true, true});

    config::RunConfig unknown;
    unknown.task = "task9";
    CHECK_THROWS_AS(unknown.expand(2), std::invalid_argument);

    config::RunConfig no_classes;
    CHECK_THROWS_AS(no_classes.expand(0), std::invalid_argument);
}

TEST_CASE("plot overlay rendering") {
    auto spec = synthdata::default_phantom_spec({24, 24, 24}, 4, 3);
    auto ph = synthdata::make_phantom(spec);
    const Volume vol(std::move(ph.volume.ct), spec.spacing);

    SUBCASE("all-background labels render pure grayscale") {
        LabelMap empty({24, 24, 24}, 4);
        const auto img = cli::render_overlay_slice(vol, empty, {2, 12});
        for (int64_t y = 0; y < img.height; ++y)
            for (int64_t x = 0; x < img.width; ++x) {
                const uint8_t* px = img.pixel(x, y);
                CHECK(px[0] == px[1]);
                CHECK(px[1] == px[2]);
            }
    }
    SUBCASE("labeled sphere produces a contour ring at its equator") {
        // sphere center from the default inventory sits at z ~ 0.62 * 24
        const auto img = cli::render_overlay_slice(vol, ph.labels, {2, 15});
        int colored = 0;
        for (int64_t y = 0; y < img.height; ++y)
            for (int64_t x = 0; x < img.width; ++x) {
                const uint8_t* px = img.pixel(x, y);
                if (!(px[0] == px[1] && px[1] == px[2])) ++colored;
            }
        CHECK(colored > 8);
    }
    SUBCASE("byte-identical PNGs for identical inputs") {
        TempDir td("plotpng");
        const auto a = cli::plot_overlay(vol, ph.labels, {{2, 12}, {0, 6}}, td.str("a"));
        const auto b = cli::plot_overlay(vol, ph.labels, {{2, 12}, {0, 6}}, td.str("b"));
        REQUIRE(a.size() == 2);
        for (size_t i = 0; i < a.size(); ++i) CHECK(file_bytes(a[i]) == file_bytes(b[i]));
    }
    SUBCASE("out-of-range slice index rejected") {
        CHECK_THROWS_AS(cli::render_overlay_slice(vol, ph.labels, {2, 99}), std::invalid_argument);
    }
}

TEST_CASE("cli plot subcommand writes PNGs from stored volumes") {
    TempDir td("cliplot");
    auto spec = synthdata::default_phantom_spec({16, 16, 16}, 4, 8);
    auto ph = synthdata::make_phantom(spec);
    volume_io::save_volume(Volume(std::move(ph.volume.ct), spec.spacing), td.str("ct.bin"));
    volume_io::save_labelmap(ph.labels, td.str("labels.bin"));
    CHECK(cli::run({"plot", "--volume", td.str("ct.bin"), "--labels", td.str("labels.bin"), "--slices",
                    "z:8,x:4", "--out", td.str("plots")}) == 0);
    CHECK(fs::exists(td.str("plots/slice_z8.png")));
    CHECK(fs::exists(td.str("plots/slice_x4.png")));
    CHECK(cli::run({"plot", "--volume", td.str("ct.bin"), "--labels", td.str("labels.bin"), "--slices",
                    "q:8", "--out", td.str("plots")}) != 0);
}

TEST_CASE("cli shapes subcommand accepts a config") {
    TempDir td("clishapes");
    config::RunConfig cfg;
    cfg.patch = {32, 32, 32};
    cfg.network.filters_per_level = {4, 8, 16, 32, 40};
    cfg.network.num_classes = 2;
    cfg.num_classes = 2;
    config::save_run_config(cfg, td.str("cfg.json"));
    CHECK(cli::run({"shapes", "--config", td.str("cfg.json")}) == 0);
    CHECK(cli::run({"shapes", "--config", td.str("missing.json")}) != 0);
}
