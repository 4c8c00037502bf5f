#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "abseg/losses.hpp"
#include "abseg/network.hpp"
#include "abseg/preprocess.hpp"
#include "abseg/volume.hpp"
#include "abseg/volume_io.hpp"

namespace abseg::trainer {

struct TrainingConfig {
    double lr0 = 1e-4;
    double momentum = 0.99;
    bool nesterov = false;
    double weight_decay = 1e-5;
    int64_t epochs = 1000;
    int64_t batch_size = 2;
    double poly_power = 0.9;
    int64_t steps_per_epoch = 250;
    uint64_t seed = 0;
    bool pseudo_enabled = false;
    double fg_bias = 0.5;
    int64_t checkpoint_interval_epochs = 0;  // 0 = final checkpoint only

    void validate() const;
};

// lr0 * (1 - e/N_e)^power, updated per epoch.
double poly_lr(int64_t e, int64_t total_epochs, double lr0, double power);

struct OptimizerState {
    network::ParameterSet velocity;
    int64_t epoch = 0;
    int64_t step = 0;
};

OptimizerState make_optimizer_state(const network::ParameterSet& params);

// Coupled L2: g' = g + wd*w, v <- m*v + g', w <- w - lr*v. Norm scales,
// offsets and biases are exempt from decay. Throws on non-finite gradients
// (the step is not applied) and on name mismatches.
void sgd_step(network::ParameterSet& params, const network::GradientMap& grads, OptimizerState& state,
              double lr, double momentum, double weight_decay, bool nesterov = false);

// One fully preprocessed case held in memory.
struct CaseData {
    std::string case_id;
    Tensor input;  // {3, X, Y, Z}
    LabelMap labels;
};

CaseData load_case(const volume_io::DatasetManifest& manifest, const volume_io::CaseEntry& entry,
                   double ct_lo_q = 0.005, double ct_hi_q = 0.995);

struct TrainDataset {
    std::vector<CaseData> cases;
};

struct StepRecord {
    int64_t step = 0;
    int64_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;                // supervised_total + pseudo_total
    double supervised_total = 0.0;    // deep-supervised hybrid over the labeled batch
    double pseudo_total = 0.0;        // same over the pseudo-labeled batch
    double supervised_hybrid = 0.0;   // full-resolution level only
    double pseudo_hybrid = 0.0;
    std::vector<double> level_losses;
};

struct TrainOptions {
    network::NetworkSpec spec;
    TrainingConfig config;
    losses::LossConfig loss;
    preprocess::AugmentationPolicy augmentation;
    std::array<int64_t, 3> patch{128, 160, 112};
    std::string loss_curve_path;   // JSONL, append-per-step; empty = no file
    std::string checkpoint_dir;    // empty = no checkpoints written
    std::string checkpoint_tag = "model";
    // resume source; when set, training continues from its step counter
    std::optional<network::Checkpoint> resume;
};

struct TrainResult {
    network::ParameterSet params;
    OptimizerState opt;
    std::vector<StepRecord> history;
    std::string final_checkpoint_path;  // empty when checkpoint_dir unset
};

// Deep-supervised hybrid loss on one batch; pseudo batches contribute a
// second full term. Deterministic per (seed, step): batch composition and
// augmentation draws derive from them, so resume reproduces an uninterrupted
// run exactly.
TrainResult train(const TrainOptions& opts, const TrainDataset& data,
                  const TrainDataset* pseudo_data = nullptr);

struct FoldResult {
    int fold = 0;
    std::string checkpoint_path;
    std::vector<std::string> validation_cases;
    double mean_foreground_dice = 0.0;
};

struct CrossValResult {
    volume_io::FoldAssignment folds;
    std::vector<FoldResult> per_fold;
};

// Trains one model per fold on the complement and reports hard foreground
// Dice on the held-out cases (full-volume sliding-window prediction).
CrossValResult run_cross_validation(const TrainOptions& opts, const volume_io::DatasetManifest& manifest,
                                    int k, const std::string& out_dir, double overlap = 0.5);

// Hard Dice of (label > 0) between prediction and truth; 1 when both empty.
double foreground_dice(const std::vector<int32_t>& pred, const std::vector<int32_t>& truth);

// Helpers shared with the smoke tests: one deep-supervised loss + gradient
// evaluation on a collated batch.
struct BatchLoss {
    double total = 0.0;
    std::vector<double> level_losses;
    network::GradientMap grads;
};

BatchLoss batch_loss_and_grads(const network::ResUNet& net, const network::ParameterSet& params,
                               const preprocess::PatchBatch& batch, const losses::LossConfig& loss_cfg);

}  // namespace abseg::trainer
