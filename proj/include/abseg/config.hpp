#pragma once

#include <array>
#include <string>
#include <vector>

#include "abseg/inference.hpp"
#include "abseg/losses.hpp"
#include "abseg/metrics.hpp"
#include "abseg/network.hpp"
#include "abseg/preprocess.hpp"
#include "abseg/trainer.hpp"

namespace abseg::config {

// One JSON file configures the whole pipeline. A task preset fills the
// task-dependent keys (the TTA/mirror flip axes); everything else has
// defaults. The fully expanded form is written next to run outputs so a rerun
// from that file reproduces them.
struct RunConfig {
    std::string task = "custom";  // task1 | task2 | custom
    int num_classes = 0;          // 0 = take from the manifest
    network::NetworkSpec network;
    losses::LossConfig loss;
    trainer::TrainingConfig training;
    preprocess::AugmentationPolicy augmentation;
    std::array<int64_t, 3> patch{128, 160, 112};
    inference::TTAPlan tta;
    double overlap = 0.5;
    bool gaussian_weighting = false;
    double ct_clip_lo_q = 0.005;
    double ct_clip_hi_q = 0.995;
    metrics::MetricPolicy metric;
    std::string manifest_path;
    std::string output_dir = "runs/out";

    // Applies the task preset to the flip axes (shared by the mirror
    // augmentation and TTA) and pins num_classes from the manifest when not
    // set explicitly.
    void expand(int manifest_num_classes);
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);
std::string dump_run_config(const RunConfig& cfg);
void save_run_config(const RunConfig& cfg, const std::string& path);

}  // namespace abseg::config
