#pragma once

#include <string>
#include <vector>

#include "abseg/png_writer.hpp"
#include "abseg/volume.hpp"

namespace abseg::cli {

// Full command-line entry point minus the program name; returns the process
// exit code. Subcommands: synth, preprocess, train, crossval, predict,
// ensemble, pseudo-train, evaluate, plot, shapes.
int run(const std::vector<std::string>& args);

struct SliceRequest {
    int axis = 2;  // 0=x, 1=y, 2=z
    int64_t index = 0;
};

// Grayscale background with colored class contours; one PNG per slice.
// Returns the written paths. Deterministic bytes for fixed inputs.
std::vector<std::string> plot_overlay(const Volume& background, const LabelMap& labels,
                                      const std::vector<SliceRequest>& slices, const std::string& out_dir,
                                      const std::string& tag = "slice");

png::Image render_overlay_slice(const Volume& background, const LabelMap& labels,
                                const SliceRequest& slice);

// ABSEG_NUM_WORKERS (>= 1, default 1).
int num_workers();

}  // namespace abseg::cli
