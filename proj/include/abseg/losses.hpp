#pragma once

#include <cstdint>
#include <vector>

#include "abseg/tensor.hpp"

namespace abseg::losses {

enum class DiceAggregation { global, per_class_mean };

struct LossConfig {
    double epsilon = 1e-5;
    double alpha = 0.3;  // false-positive weight
    double beta = 0.7;   // false-negative weight
    DiceAggregation dice_aggregation = DiceAggregation::global;
    // The printed cross-entropy carries a 1/C factor on top of 1/N; set
    // false for the conventional 1/N-only mean.
    bool ce_class_factor = true;
    std::vector<double> ds_weights{8.0 / 15.0, 4.0 / 15.0, 2.0 / 15.0, 1.0 / 15.0};

    void validate() const;
};

// Probabilities and one-hot targets share layout {B, C, spatial...} with the
// class axis second. Losses treat everything after it as flat voxels.
struct FlatView {
    int64_t batch;
    int64_t classes;
    int64_t voxels;  // per sample
};

FlatView flat_view(const Tensor& p);

// Exact indicator encoding of integer labels; labels length B*voxels.
Tensor one_hot(const std::vector<int32_t>& labels, const std::vector<int64_t>& spatial_shape,
               int64_t batch, int num_classes);

// Inverse of one_hot for hard maps; used by tests.
std::vector<int32_t> argmax_classes(const Tensor& p);

// Each loss returns its value; when grad_p is non-null it is filled with
// d(loss)/dp (same shape as p, overwritten).

// Overlap ratio (sum p*y + eps) / (sum p + y + eps) as printed, summed
// globally over samples and classes; per-class-mean averages the same ratio
// per class. Higher is better; this is the raw ratio, not yet negated.
real soft_dice(const Tensor& p, const Tensor& y, const LossConfig& cfg, Tensor* grad_p = nullptr);

// -(1/N)(1/C) sum y log p with a 1e-12 probability floor.
real cross_entropy(const Tensor& p, const Tensor& y, const LossConfig& cfg, Tensor* grad_p = nullptr);

// -soft_dice + cross_entropy.
real dcce(const Tensor& p, const Tensor& y, const LossConfig& cfg, Tensor* grad_p = nullptr);

// 1 - TP/(TP + alpha*FP + beta*FN), accumulated globally.
real tversky_loss(const Tensor& p, const Tensor& y, const LossConfig& cfg, Tensor* grad_p = nullptr);

// dcce + tversky_loss.
real hybrid_loss(const Tensor& p, const Tensor& y, const LossConfig& cfg, Tensor* grad_p = nullptr);

// Weighted sum of per-level losses; weights must match the level count.
real deep_supervised(const std::vector<real>& level_losses, const std::vector<double>& ds_weights);

// Supervised hybrid plus pseudo-labeled hybrid (either side optional via
// empty tensors). grad outputs mirror the two inputs.
real final_loss(const Tensor& p_sup, const Tensor& y_sup, const Tensor& p_pseudo,
                const Tensor& y_pseudo, const LossConfig& cfg, Tensor* grad_sup = nullptr,
                Tensor* grad_pseudo = nullptr);

// Numerically stabilized channel softmax for {B, C, spatial...} logits.
Tensor softmax(const Tensor& logits);

// Chain rule through softmax: given dL/dp at p = softmax(z), produce dL/dz.
Tensor softmax_backward(const Tensor& p, const Tensor& grad_p);

}  // namespace abseg::losses
