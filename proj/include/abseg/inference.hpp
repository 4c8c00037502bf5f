#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "abseg/network.hpp"
#include "abseg/tensor.hpp"
#include "abseg/volume.hpp"
#include "abseg/volume_io.hpp"

namespace abseg::inference {

// Per-class softmax output over a full volume; channel sums are 1.
struct ProbabilityMap {
    Tensor prob;  // {C, X, Y, Z}
    Spacing spacing{1.0, 1.0, 1.0};
    std::string case_id;

    void validate(double tol = 1e-5) const;
};

// Patch predictor: {3, px, py, pz} -> {C, px, py, pz} probabilities.
using PredictPatchFn = std::function<Tensor(const Tensor&)>;
// Whole-volume predictor: {3, X, Y, Z} -> ProbabilityMap.
using PredictVolumeFn = std::function<ProbabilityMap(const Tensor&)>;

// Softmax of the full-resolution head.
PredictPatchFn make_patch_predictor(const network::ResUNet& net, const network::ParameterSet& params);

struct SlidingWindowOptions {
    std::array<int64_t, 3> patch{128, 160, 112};
    double overlap = 0.5;
    bool gaussian_weighting = false;  // center-weighted window, sigma = patch/8
};

// Window origins along one axis: first at 0, last flush with the far edge,
// consecutive steps never above floor(patch*(1-overlap)).
std::vector<int64_t> window_origins(int64_t extent, int64_t patch, double overlap);

// Tiles the (edge-padded) volume, averages overlapping softmax outputs with
// the configured weighting, and crops back to the original extent.
ProbabilityMap sliding_window(const PredictPatchFn& predict, const Tensor& volume,
                              const SlidingWindowOptions& opt);

struct TTAPlan {
    std::array<bool, 3> allowed{true, true, true};  // flips permitted per axis

    // All subsets of the allowed axes, identity first, fixed order.
    std::vector<std::array<bool, 3>> transforms() const;
    static TTAPlan from_axes(const std::vector<std::string>& axes);
    std::vector<std::string> axis_names() const;
};

// Averages untransform(predict(transform(volume))) over the plan.
ProbabilityMap tta_predict(const PredictVolumeFn& predict, const Tensor& volume, const TTAPlan& plan);

// Voxelwise arithmetic mean of per-model predictions.
ProbabilityMap ensemble(const std::vector<ProbabilityMap>& preds);

// Hard decision; ties break toward the lowest class index.
LabelMap argmax_labels(const ProbabilityMap& prob);

// Full per-case path: ensemble over models of TTA over sliding windows.
ProbabilityMap predict_case(const std::vector<network::Checkpoint>& models, const Tensor& input,
                            const TTAPlan& plan, const SlidingWindowOptions& swo,
                            const std::string& case_id, const Spacing& spacing);

// Flip a {C, X, Y, Z} tensor along the flagged spatial axes (its own inverse).
Tensor flip_channels(const Tensor& t, const std::array<bool, 3>& axes);

struct PseudoOptions {
    TTAPlan plan;
    SlidingWindowOptions window;
    std::string out_dir;
    std::vector<std::string> model_names;  // recorded in provenance
    double ct_lo_q = 0.005;
    double ct_hi_q = 0.995;
};

// Predicts every unlabeled (test) case, stores hard label maps with JSON
// provenance sidecars, and returns a manifest whose entries point at the
// pseudo labels (split remains "test"; labels now present).
volume_io::DatasetManifest generate_pseudo_labels(const std::vector<network::Checkpoint>& models,
                                                  const volume_io::DatasetManifest& manifest,
                                                  const PseudoOptions& opt);

// 4-D raw+JSON storage for probability maps (channels outermost, then the
// volume in x-fastest order).
void save_probability_map(const ProbabilityMap& pm, const std::string& path);
ProbabilityMap load_probability_map(const std::string& path);

}  // namespace abseg::inference
