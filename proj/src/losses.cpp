#include "abseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace abseg::losses {

namespace {
constexpr double kProbFloor = 1e-12;

void check_pair(const Tensor& p, const Tensor& y, const char* op) {
    if (!p.same_shape(y))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_to_string(p.shape()) +
                                    " vs " + shape_to_string(y.shape()));
    if (p.rank() < 2) throw std::invalid_argument(std::string(op) + ": need at least {B,C} dims");
}
}  // namespace

void LossConfig::validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("LossConfig: epsilon must be > 0");
    if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("LossConfig: alpha/beta must be >= 0");
    double s = 0.0;
    for (double w : ds_weights) s += w;
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("LossConfig: ds_weights must sum to 1");
}

FlatView flat_view(const Tensor& p) {
    if (p.rank() < 2) throw std::invalid_argument("flat_view: need at least {B,C} dims");
    FlatView v{p.dim(0), p.dim(1), 1};
    for (int i = 2; i < p.rank(); ++i) v.voxels *= p.dim(i);
    return v;
}

Tensor one_hot(const std::vector<int32_t>& labels, const std::vector<int64_t>& spatial_shape,
               int64_t batch, int num_classes) {
    int64_t voxels = 1;
    for (int64_t d : spatial_shape) voxels *= d;
    if (static_cast<int64_t>(labels.size()) != batch * voxels)
        throw std::invalid_argument("one_hot: label count does not match batch*spatial size");
    std::vector<int64_t> shape{batch, num_classes};
    shape.insert(shape.end(), spatial_shape.begin(), spatial_shape.end());
    Tensor y(shape);
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t i = 0; i < voxels; ++i) {
            const int32_t c = labels[static_cast<size_t>(b * voxels + i)];
            if (c < 0 || c >= num_classes)
                throw std::invalid_argument("one_hot: voxel " + std::to_string(b * voxels + i) +
                                            " has label " + std::to_string(c) + " outside [0," +
                                            std::to_string(num_classes - 1) + "]");
            y[(b * num_classes + c) * voxels + i] = 1.0;
        }
    return y;
}

std::vector<int32_t> argmax_classes(const Tensor& p) {
    const FlatView v = flat_view(p);
    std::vector<int32_t> out(static_cast<size_t>(v.batch * v.voxels));
    for (int64_t b = 0; b < v.batch; ++b)
        for (int64_t i = 0; i < v.voxels; ++i) {
            int32_t best = 0;
            real best_val = p[(b * v.classes + 0) * v.voxels + i];
            for (int64_t c = 1; c < v.classes; ++c) {
                const real val = p[(b * v.classes + c) * v.voxels + i];
                if (val > best_val) {
                    best_val = val;
                    best = static_cast<int32_t>(c);
                }
            }
            out[static_cast<size_t>(b * v.voxels + i)] = best;
        }
    return out;
}

real soft_dice(const Tensor& p, const Tensor& y, const LossConfig& cfg, Tensor* grad_p) {
    check_pair(p, y, "soft_dice");
    cfg.validate();
    const FlatView v = flat_view(p);
    const double eps = cfg.epsilon;

    if (cfg.dice_aggregation == DiceAggregation::global) {
        double inter = 0.0, total = 0.0;
        for (int64_t i = 0; i < p.numel(); ++i) {
            inter += p[i] * y[i];
            total += p[i] + y[i];
        }
        const double A = inter + eps;
        const double B = total + eps;
        const double dice = A / B;
        if (grad_p) {
            *grad_p = Tensor(p.shape());
            const double invB = 1.0 / B;
            for (int64_t i = 0; i < p.numel(); ++i)
                (*grad_p)[i] = (y[i] * B - A) * invB * invB;
        }
        return dice;
    }

    // per-class mean of the same printed ratio
    const int64_t C = v.classes;
    std::vector<double> inters(static_cast<size_t>(C), 0.0), totals(static_cast<size_t>(C), 0.0);
    for (int64_t b = 0; b < v.batch; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const int64_t base = (b * C + c) * v.voxels;
            for (int64_t i = 0; i < v.voxels; ++i) {
                inters[static_cast<size_t>(c)] += p[base + i] * y[base + i];
                totals[static_cast<size_t>(c)] += p[base + i] + y[base + i];
            }
        }
    double mean = 0.0;
    for (int64_t c = 0; c < C; ++c)
        mean += (inters[static_cast<size_t>(c)] + eps) / (totals[static_cast<size_t>(c)] + eps);
    mean /= static_cast<double>(C);
    if (grad_p) {
        *grad_p = Tensor(p.shape());
        for (int64_t b = 0; b < v.batch; ++b)
            for (int64_t c = 0; c < C; ++c) {
                const double A = inters[static_cast<size_t>(c)] + eps;
                const double B = totals[static_cast<size_t>(c)] + eps;
                const int64_t base = (b * C + c) * v.voxels;
                for (int64_t i = 0; i < v.voxels; ++i)
                    (*grad_p)[base + i] = (y[base + i] * B - A) / (B * B * static_cast<double>(C));
            }
    }
    return mean;
}

real cross_entropy(const Tensor& p, const Tensor& y, const LossConfig& cfg, Tensor* grad_p) {
    check_pair(p, y, "cross_entropy");
    const FlatView v = flat_view(p);
    const double n_factor = 1.0 / static_cast<double>(v.batch * v.voxels);
    const double c_factor = cfg.ce_class_factor ? 1.0 / static_cast<double>(v.classes) : 1.0;
    const double scale = n_factor * c_factor;

    double acc = 0.0;
    if (grad_p) *grad_p = Tensor(p.shape());
    for (int64_t i = 0; i < p.numel(); ++i) {
        if (y[i] == 0.0) continue;
        const double pc = std::max(p[i], kProbFloor);
        acc += y[i] * std::log(pc);
        if (grad_p && p[i] > kProbFloor) (*grad_p)[i] = -scale * y[i] / pc;
    }
    return -scale * acc;
}

real dcce(const Tensor& p, const Tensor& y, const LossConfig& cfg, Tensor* grad_p) {
    Tensor g_dice, g_ce;
    const real dice = soft_dice(p, y, cfg, grad_p ? &g_dice : nullptr);
    const real ce = cross_entropy(p, y, cfg, grad_p ? &g_ce : nullptr);
    if (grad_p) {
        *grad_p = Tensor(p.shape());
        for (int64_t i = 0; i < p.numel(); ++i) (*grad_p)[i] = -g_dice[i] + g_ce[i];
    }
    return -dice + ce;
}

real tversky_loss(const Tensor& p, const Tensor& y, const LossConfig& cfg, Tensor* grad_p) {
    check_pair(p, y, "tversky_loss");
    cfg.validate();
    double tp = 0.0, fp = 0.0, fn = 0.0;
    for (int64_t i = 0; i < p.numel(); ++i) {
        tp += p[i] * y[i];
        fp += p[i] * (1.0 - y[i]);
        fn += (1.0 - p[i]) * y[i];
    }
    const double A = tp + cfg.epsilon;
    const double B = tp + cfg.alpha * fp + cfg.beta * fn + cfg.epsilon;
    const double index = A / B;
    if (grad_p) {
        *grad_p = Tensor(p.shape());
        const double invB = 1.0 / B;
        for (int64_t i = 0; i < p.numel(); ++i) {
            const double dA = y[i];
            const double dB = y[i] + cfg.alpha * (1.0 - y[i]) - cfg.beta * y[i];
            (*grad_p)[i] = -(dA * B - A * dB) * invB * invB;
        }
    }
    return 1.0 - index;
}

real hybrid_loss(const Tensor& p, const Tensor& y, const LossConfig& cfg, Tensor* grad_p) {
    Tensor g_dcce, g_tv;
    const real a = dcce(p, y, cfg, grad_p ? &g_dcce : nullptr);
    const real b = tversky_loss(p, y, cfg, grad_p ? &g_tv : nullptr);
    if (grad_p) {
        *grad_p = Tensor(p.shape());
        for (int64_t i = 0; i < p.numel(); ++i) (*grad_p)[i] = g_dcce[i] + g_tv[i];
    }
    return a + b;
}

real deep_supervised(const std::vector<real>& level_losses, const std::vector<double>& ds_weights) {
    if (level_losses.size() != ds_weights.size())
        throw std::invalid_argument("deep_supervised: " + std::to_string(level_losses.size()) +
                                    " losses vs " + std::to_string(ds_weights.size()) + " weights");
    real acc = 0.0;
    for (size_t i = 0; i < level_losses.size(); ++i) acc += ds_weights[i] * level_losses[i];
    return acc;
}

real final_loss(const Tensor& p_sup, const Tensor& y_sup, const Tensor& p_pseudo,
                const Tensor& y_pseudo, const LossConfig& cfg, Tensor* grad_sup, Tensor* grad_pseudo) {
    real total = hybrid_loss(p_sup, y_sup, cfg, grad_sup);
    if (p_pseudo.numel() > 0) {
        total += hybrid_loss(p_pseudo, y_pseudo, cfg, grad_pseudo);
    } else if (grad_pseudo) {
        *grad_pseudo = Tensor();
    }
    return total;
}

Tensor softmax(const Tensor& logits) {
    const FlatView v = flat_view(logits);
    Tensor out(logits.shape());
    for (int64_t b = 0; b < v.batch; ++b)
        for (int64_t i = 0; i < v.voxels; ++i) {
            real m = logits[(b * v.classes) * v.voxels + i];
            for (int64_t c = 1; c < v.classes; ++c)
                m = std::max(m, logits[(b * v.classes + c) * v.voxels + i]);
            double denom = 0.0;
            for (int64_t c = 0; c < v.classes; ++c) {
                const double e = std::exp(logits[(b * v.classes + c) * v.voxels + i] - m);
                out[(b * v.classes + c) * v.voxels + i] = e;
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (int64_t c = 0; c < v.classes; ++c) out[(b * v.classes + c) * v.voxels + i] *= inv;
        }
    return out;
}

Tensor softmax_backward(const Tensor& p, const Tensor& grad_p) {
    check_pair(p, grad_p, "softmax_backward");
    const FlatView v = flat_view(p);
    Tensor out(p.shape());
    for (int64_t b = 0; b < v.batch; ++b)
        for (int64_t i = 0; i < v.voxels; ++i) {
            double dot = 0.0;
            for (int64_t c = 0; c < v.classes; ++c) {
                const int64_t k = (b * v.classes + c) * v.voxels + i;
                dot += grad_p[k] * p[k];
            }
            for (int64_t c = 0; c < v.classes; ++c) {
                const int64_t k = (b * v.classes + c) * v.voxels + i;
                out[k] = p[k] * (grad_p[k] - dot);
            }
        }
    return out;
}

}  // namespace abseg::losses
