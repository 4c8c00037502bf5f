#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "abseg/tensor.hpp"

namespace abseg::network {

// Declarative plan of the residual U-shape network: a deep encoder of
// residual blocks with strided-conv downsampling, a shallow decoder of
// {1x1x1 reduce, transpose-conv upsample, skip concat, single conv block}
// stages, and 1x1x1 output heads on the top decoder levels.
struct NetworkSpec {
    int levels = 5;
    std::vector<int> blocks_per_level{1, 2, 3, 4, 4};
    std::vector<int> filters_per_level{32, 64, 128, 256, 320};
    // One stride triple per encoder transition (levels-1 of them). The
    // default honors the reported bottleneck dims; set the last transition
    // to {2,2,1} for the z-sparing variant.
    std::vector<std::array<int, 3>> downsample_strides{{2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {2, 2, 2}};
    int kernel = 3;
    double leaky_slope = 0.01;
    double instnorm_eps = 1e-5;
    int num_classes = 2;
    int deep_supervision_levels = 4;  // requested output heads, capped at levels-1
    std::vector<double> ds_weights;   // empty -> halving weights, normalized

    void validate() const;
    int num_heads() const;
    // ds_weights with defaults resolved (size == num_heads(), sums to 1).
    std::vector<double> resolved_ds_weights() const;
    // Cumulative stride product per axis across all transitions.
    std::array<int64_t, 3> cumulative_stride() const;
};

struct StageShape {
    std::string name;
    std::vector<int64_t> shape;  // {C, X, Y, Z}
};

struct ShapePlan {
    std::vector<StageShape> stages;
    const StageShape& find(const std::string& name) const;
    std::string to_string() const;
};

// Symbolic per-stage shape table; allocates nothing. Throws on spatial dims
// not divisible by the cumulative stride of their axis.
ShapePlan shape_plan(const NetworkSpec& spec, const std::array<int64_t, 4>& input_shape);

// Named learnable arrays in a fixed construction order.
class ParameterSet {
public:
    Tensor& add(const std::string& name, Tensor value);
    bool has(const std::string& name) const;
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    size_t size() const { return items_.size(); }
    int64_t total_scalars() const;
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::vector<std::pair<std::string, Tensor>>& items() { return items_; }

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::map<std::string, size_t> index_;
};

using GradientMap = ParameterSet;

enum class Mode { train, eval };

struct ForwardOutputs {
    // logits[0] is the full-resolution head; logits[h] lives at 1/2^h scale
    // along each downsampled axis.
    std::vector<Tensor> logits;
};

// Per-forward cache consumed by backward().
struct Workspace {
    struct Data;
    std::unique_ptr<Data> data;
    Workspace();
    ~Workspace();
    Workspace(Workspace&&) noexcept;
    Workspace& operator=(Workspace&&) noexcept;
};

class ResUNet {
public:
    explicit ResUNet(NetworkSpec spec);
    ~ResUNet();
    ResUNet(ResUNet&&) noexcept;
    ResUNet& operator=(ResUNet&&) noexcept;

    const NetworkSpec& spec() const;

    // He fan-in init for conv kernels, unit scales and zero offsets for the
    // norms, zero biases; deterministic for a fixed seed.
    ParameterSet init_params(uint64_t seed) const;

    ForwardOutputs forward(const ParameterSet& params, const Tensor& input, Mode mode) const;
    ForwardOutputs forward(const ParameterSet& params, const Tensor& input, Mode mode,
                           Workspace& ws) const;

    // dlogits must match forward's logits shapes; returns one gradient per
    // parameter (exact zeros where the loss does not reach).
    GradientMap backward(const ParameterSet& params, const Workspace& ws,
                         const std::vector<Tensor>& dlogits) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Spec-level convenience wrappers matching the module operations.
ParameterSet build(const NetworkSpec& spec, uint64_t seed);
ForwardOutputs forward(const ParameterSet& params, const NetworkSpec& spec, const Tensor& input,
                       Mode mode);

// Checkpoint archive: versioned single file holding the spec, step counters,
// parameters and (optionally) optimizer velocities.
struct Checkpoint {
    NetworkSpec spec;
    ParameterSet params;
    int64_t step = 0;
    int64_t epoch = 0;
    std::optional<ParameterSet> velocities;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// JSON round trip for specs (used by checkpoints and run configs).
std::string spec_to_json_string(const NetworkSpec& spec);
NetworkSpec spec_from_json_string(const std::string& text);

// Bare layer primitives, exposed for direct verification. Tensors are
// {B, C, X, Y, Z}; conv weights {out, in, kx, ky, kz}.
namespace ops {

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const std::array<int64_t, 3>& stride, const std::array<int64_t, 3>& pad);

struct ConvGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

ConvGrads conv3d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                          const std::array<int64_t, 3>& stride, const std::array<int64_t, 3>& pad);

}  // namespace ops

}  // namespace abseg::network
