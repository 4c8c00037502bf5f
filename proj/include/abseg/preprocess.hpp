#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <optional>

#include "abseg/rng.hpp"
#include "abseg/tensor.hpp"
#include "abseg/volume.hpp"
#include "abseg/volume_io.hpp"

namespace abseg::preprocess {

// Sort-based quantile with linear interpolation between order statistics.
real quantile(const Tensor& grid, double q);

// Clamps values to [quantile(lo_q), quantile(hi_q)]. Values inside the band
// are untouched, so the operation is idempotent for a fixed band.
Tensor clip_ct(const Tensor& grid, double lo_q, double hi_q);

// Zero-mean unit-variance (population) rescale. A zero-variance grid is
// degenerate input: returns all zeros and emits a warning on stderr.
Tensor znormalize(const Tensor& grid);

// Channel order fixed as (CT, T1ce, FLAIR).
Tensor stack_modalities(const MultiModalVolume& volume);

// Full per-case pipeline: clip CT between intensity quantiles, then z-score
// each modality independently, then stack.
Tensor preprocess_case(const MultiModalVolume& volume, double ct_lo_q, double ct_hi_q);

struct PreprocessedCase {
    std::string case_id;
    Spacing spacing{1.0, 1.0, 1.0};
    Tensor input;  // {3, X, Y, Z}
    std::optional<LabelMap> labels;
};

PreprocessedCase load_preprocessed_case(const volume_io::DatasetManifest& manifest,
                                        const volume_io::CaseEntry& entry, double ct_lo_q = 0.005,
                                        double ct_hi_q = 0.995);

struct Patch {
    Tensor inputs;                  // {3, px, py, pz}
    std::vector<int32_t> targets;   // px*py*pz, z fastest
    std::array<int64_t, 3> size{0, 0, 0};
    std::array<int64_t, 3> origin{0, 0, 0};  // crop offset in the (padded) volume

    int32_t target_at(int64_t x, int64_t y, int64_t z) const {
        return targets[static_cast<size_t>((x * size[1] + y) * size[2] + z)];
    }
};

// Crops a patch; with probability fg_bias the window is placed around a
// random foreground voxel (when any exists). Volumes smaller than the patch
// are edge-padded symmetrically first.
Patch sample_patch(const Tensor& input, const LabelMap& labels, std::array<int64_t, 3> patch,
                   Rng& rng, double fg_bias);

struct AugmentationPolicy {
    std::array<double, 3> rotation_deg{30.0, 30.0, 30.0};  // max |angle| per axis
    double scale_min = 0.85;
    double scale_max = 1.25;
    std::array<bool, 3> mirror_axes{true, true, true};  // shared with the TTA flip policy
    double mirror_prob = 0.5;                           // per allowed axis
    double gamma_min = 0.7;
    double gamma_max = 1.5;
    double brightness_sigma = 0.1;  // in units of channel standard deviation
    double p_rotate_scale = 0.2;
    double p_gamma = 0.15;
    double p_brightness = 0.15;

    void validate() const;
};

// Spatial transforms hit inputs (trilinear) and targets (nearest) alike;
// intensity transforms hit inputs only. Output dimensions never change.
Patch augment(const Patch& patch, const AugmentationPolicy& policy, Rng& rng);

// Collated minibatch.
struct PatchBatch {
    Tensor inputs;                 // {B, 3, px, py, pz}
    std::vector<int32_t> targets;  // B*px*py*pz
    std::array<int64_t, 3> size{0, 0, 0};
    int64_t batch = 0;
};

PatchBatch collate(const std::vector<Patch>& patches);

}  // namespace abseg::preprocess
