#include "abseg/network.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "abseg/rng.hpp"

using json = nlohmann::json;

namespace abseg::network {

// ===========================================================================
// Spec
// ===========================================================================

void NetworkSpec::validate() const {
    if (levels < 2) throw std::invalid_argument("NetworkSpec: levels must be >= 2");
    if (static_cast<int>(blocks_per_level.size()) != levels)
        throw std::invalid_argument("NetworkSpec: blocks_per_level size != levels");
    if (static_cast<int>(filters_per_level.size()) != levels)
        throw std::invalid_argument("NetworkSpec: filters_per_level size != levels");
    if (static_cast<int>(downsample_strides.size()) != levels - 1)
        throw std::invalid_argument("NetworkSpec: need levels-1 downsample stride triples");
    for (int i = 0; i + 1 < levels; ++i)
        if (filters_per_level[i] > filters_per_level[i + 1])
            throw std::invalid_argument("NetworkSpec: filters must be monotone nondecreasing");
    for (int f : filters_per_level)
        if (f < 2) throw std::invalid_argument("NetworkSpec: filters must be >= 2");
    for (const auto& s : downsample_strides)
        for (int a = 0; a < 3; ++a)
            if (s[a] < 1) throw std::invalid_argument("NetworkSpec: strides must be >= 1");
    if (kernel != 3) throw std::invalid_argument("NetworkSpec: only 3x3x3 block kernels supported");
    if (num_classes < 2) throw std::invalid_argument("NetworkSpec: num_classes must be >= 2");
    if (deep_supervision_levels < 1)
        throw std::invalid_argument("NetworkSpec: deep_supervision_levels must be >= 1");
    const auto w = resolved_ds_weights();
    double sum = 0.0;
    for (double x : w) sum += x;
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("NetworkSpec: ds_weights must sum to 1");
}

int NetworkSpec::num_heads() const {
    return std::max(1, std::min(deep_supervision_levels, levels - 1));
}

std::vector<double> NetworkSpec::resolved_ds_weights() const {
    const int h = num_heads();
    if (!ds_weights.empty()) {
        if (static_cast<int>(ds_weights.size()) != h)
            throw std::invalid_argument("NetworkSpec: ds_weights size must equal head count " +
                                        std::to_string(h));
        return ds_weights;
    }
    // Halving per level, normalized: for 4 heads this is 8/15, 4/15, 2/15, 1/15.
    std::vector<double> w(static_cast<size_t>(h));
    const double denom = static_cast<double>((1LL << h) - 1);
    for (int i = 0; i < h; ++i)
        w[static_cast<size_t>(i)] = static_cast<double>(1LL << (h - 1 - i)) / denom;
    return w;
}

std::array<int64_t, 3> NetworkSpec::cumulative_stride() const {
    std::array<int64_t, 3> cum{1, 1, 1};
    for (const auto& s : downsample_strides)
        for (int a = 0; a < 3; ++a) cum[a] *= s[a];
    return cum;
}

// ===========================================================================
// Shape plan
// ===========================================================================

const StageShape& ShapePlan::find(const std::string& name) const {
    for (const auto& s : stages)
        if (s.name == name) return s;
    throw std::runtime_error("ShapePlan: no stage named " + name);
}

std::string ShapePlan::to_string() const {
    std::ostringstream os;
    size_t w = 0;
    for (const auto& s : stages) w = std::max(w, s.name.size());
    for (const auto& s : stages) {
        os << s.name << std::string(w + 2 - s.name.size(), ' ') << shape_to_string(s.shape) << "\n";
    }
    return os.str();
}

ShapePlan shape_plan(const NetworkSpec& spec, const std::array<int64_t, 4>& input_shape) {
    spec.validate();
    const char* axis_names = "xyz";
    const auto cum = spec.cumulative_stride();
    for (int a = 0; a < 3; ++a) {
        const int64_t dim = input_shape[static_cast<size_t>(a + 1)];
        if (dim < 1) throw std::invalid_argument("shape_plan: nonpositive spatial dim");
        if (dim % cum[static_cast<size_t>(a)] != 0)
            throw std::invalid_argument(std::string("shape_plan: axis ") + axis_names[a] + " extent " +
                                        std::to_string(dim) + " not divisible by cumulative stride " +
                                        std::to_string(cum[static_cast<size_t>(a)]));
    }

    ShapePlan plan;
    plan.stages.push_back({"input", {input_shape[0], input_shape[1], input_shape[2], input_shape[3]}});

    std::vector<std::array<int64_t, 3>> dims(static_cast<size_t>(spec.levels));
    dims[0] = {input_shape[1], input_shape[2], input_shape[3]};
    for (int l = 1; l < spec.levels; ++l) {
        const auto& s = spec.downsample_strides[static_cast<size_t>(l - 1)];
        for (int a = 0; a < 3; ++a)
            dims[static_cast<size_t>(l)][static_cast<size_t>(a)] =
                dims[static_cast<size_t>(l - 1)][static_cast<size_t>(a)] / s[static_cast<size_t>(a)];
    }

    for (int l = 0; l < spec.levels; ++l) {
        const auto& d = dims[static_cast<size_t>(l)];
        plan.stages.push_back({"encoder.l" + std::to_string(l),
                               {spec.filters_per_level[static_cast<size_t>(l)], d[0], d[1], d[2]}});
    }
    {
        const auto& d = dims[static_cast<size_t>(spec.levels - 1)];
        plan.stages.push_back(
            {"bottleneck", {spec.filters_per_level[static_cast<size_t>(spec.levels - 1)], d[0], d[1], d[2]}});
    }
    for (int l = spec.levels - 2; l >= 0; --l) {
        const auto& d = dims[static_cast<size_t>(l)];
        plan.stages.push_back({"decoder.l" + std::to_string(l),
                               {spec.filters_per_level[static_cast<size_t>(l)], d[0], d[1], d[2]}});
    }
    for (int h = 0; h < spec.num_heads(); ++h) {
        const auto& d = dims[static_cast<size_t>(h)];
        plan.stages.push_back({"head.l" + std::to_string(h), {spec.num_classes, d[0], d[1], d[2]}});
    }
    return plan;
}

// ===========================================================================
// ParameterSet
// ===========================================================================

Tensor& ParameterSet::add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw std::invalid_argument("ParameterSet: duplicate name " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(value));
    return items_.back().second;
}

bool ParameterSet::has(const std::string& name) const { return index_.count(name) > 0; }

Tensor& ParameterSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParameterSet: no parameter named " + name);
    return items_[it->second].second;
}

const Tensor& ParameterSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParameterSet: no parameter named " + name);
    return items_[it->second].second;
}

int64_t ParameterSet::total_scalars() const {
    int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
}

// ===========================================================================
// Layer primitives. All act on one sample {C, X, Y, Z}; batch loops live in
// the node executor. GEMMs go through Eigen maps.
// ===========================================================================

namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvGeom {
    int64_t in_ch, out_ch;
    std::array<int64_t, 3> in_dims, out_dims;
    std::array<int64_t, 3> k, stride, pad;

    int64_t patch_len() const { return in_ch * k[0] * k[1] * k[2]; }
    int64_t out_voxels() const { return out_dims[0] * out_dims[1] * out_dims[2]; }
    int64_t in_voxels() const { return in_dims[0] * in_dims[1] * in_dims[2]; }
};

std::array<int64_t, 3> conv_out_dims(const std::array<int64_t, 3>& in, const std::array<int64_t, 3>& k,
                                     const std::array<int64_t, 3>& stride,
                                     const std::array<int64_t, 3>& pad) {
    std::array<int64_t, 3> out{};
    for (int a = 0; a < 3; ++a) out[a] = (in[a] + 2 * pad[a] - k[a]) / stride[a] + 1;
    return out;
}

// cols has layout {patch_len, out_voxels}, out voxel index z-fastest.
void im2col(const real* in, const ConvGeom& g, real* cols) {
    const int64_t ov = g.out_voxels();
    const int64_t iy = g.in_dims[1], iz = g.in_dims[2], ix = g.in_dims[0];
    int64_t row = 0;
    for (int64_t c = 0; c < g.in_ch; ++c) {
        const real* chan = in + c * g.in_voxels();
        for (int64_t kx = 0; kx < g.k[0]; ++kx)
            for (int64_t ky = 0; ky < g.k[1]; ++ky)
                for (int64_t kz = 0; kz < g.k[2]; ++kz, ++row) {
                    real* dst = cols + row * ov;
                    int64_t o = 0;
                    for (int64_t ox = 0; ox < g.out_dims[0]; ++ox) {
                        const int64_t sx = ox * g.stride[0] - g.pad[0] + kx;
                        const bool x_ok = sx >= 0 && sx < ix;
                        for (int64_t oy = 0; oy < g.out_dims[1]; ++oy) {
                            const int64_t sy = oy * g.stride[1] - g.pad[1] + ky;
                            const bool y_ok = sy >= 0 && sy < iy;
                            const real* src_line = chan + (sx * iy + sy) * iz;
                            for (int64_t oz = 0; oz < g.out_dims[2]; ++oz, ++o) {
                                const int64_t sz = oz * g.stride[2] - g.pad[2] + kz;
                                dst[o] = (x_ok && y_ok && sz >= 0 && sz < iz) ? src_line[sz] : real(0);
                            }
                        }
                    }
                }
    }
}

// Scatter-add inverse of im2col.
void col2im_add(const real* cols, const ConvGeom& g, real* in_grad) {
    const int64_t ov = g.out_voxels();
    const int64_t iy = g.in_dims[1], iz = g.in_dims[2], ix = g.in_dims[0];
    int64_t row = 0;
    for (int64_t c = 0; c < g.in_ch; ++c) {
        real* chan = in_grad + c * g.in_voxels();
        for (int64_t kx = 0; kx < g.k[0]; ++kx)
            for (int64_t ky = 0; ky < g.k[1]; ++ky)
                for (int64_t kz = 0; kz < g.k[2]; ++kz, ++row) {
                    const real* src = cols + row * ov;
                    int64_t o = 0;
                    for (int64_t ox = 0; ox < g.out_dims[0]; ++ox) {
                        const int64_t sx = ox * g.stride[0] - g.pad[0] + kx;
                        const bool x_ok = sx >= 0 && sx < ix;
                        for (int64_t oy = 0; oy < g.out_dims[1]; ++oy) {
                            const int64_t sy = oy * g.stride[1] - g.pad[1] + ky;
                            const bool y_ok = sy >= 0 && sy < iy;
                            real* dst_line = chan + (sx * iy + sy) * iz;
                            for (int64_t oz = 0; oz < g.out_dims[2]; ++oz, ++o) {
                                const int64_t sz = oz * g.stride[2] - g.pad[2] + kz;
                                if (x_ok && y_ok && sz >= 0 && sz < iz) dst_line[sz] += src[o];
                            }
                        }
                    }
                }
    }
}

void conv3d_forward_sample(const real* in, const Tensor& weight, const Tensor& bias, const ConvGeom& g,
                           real* out, std::vector<real>& scratch) {
    scratch.resize(static_cast<size_t>(g.patch_len() * g.out_voxels()));
    im2col(in, g, scratch.data());
    ConstMapMat W(weight.data(), g.out_ch, g.patch_len());
    ConstMapMat cols(scratch.data(), g.patch_len(), g.out_voxels());
    MapMat O(out, g.out_ch, g.out_voxels());
    O.noalias() = W * cols;
    for (int64_t c = 0; c < g.out_ch; ++c) O.row(c).array() += bias[c];
}

void conv3d_backward_sample(const real* in, const real* dout, const Tensor& weight, const ConvGeom& g,
                            real* din, real* dweight, real* dbias, std::vector<real>& scratch,
                            std::vector<real>& dcols_buf) {
    scratch.resize(static_cast<size_t>(g.patch_len() * g.out_voxels()));
    im2col(in, g, scratch.data());
    ConstMapMat cols(scratch.data(), g.patch_len(), g.out_voxels());
    ConstMapMat dO(dout, g.out_ch, g.out_voxels());

    MapMat dW(dweight, g.out_ch, g.patch_len());
    dW.noalias() += dO * cols.transpose();
    for (int64_t c = 0; c < g.out_ch; ++c) dbias[c] += dO.row(c).sum();

    if (din) {
        dcols_buf.resize(static_cast<size_t>(g.patch_len() * g.out_voxels()));
        ConstMapMat W(weight.data(), g.out_ch, g.patch_len());
        MapMat dcols(dcols_buf.data(), g.patch_len(), g.out_voxels());
        dcols.noalias() = W.transpose() * dO;
        col2im_add(dcols_buf.data(), g, din);
    }
}

// Transpose conv with kernel == stride (non-overlapping upsampling).
// weight layout {C_in, C_out, kx, ky, kz}.
struct TConvGeom {
    int64_t in_ch, out_ch;
    std::array<int64_t, 3> in_dims, k;  // out_dims = in_dims * k
    int64_t in_voxels() const { return in_dims[0] * in_dims[1] * in_dims[2]; }
    int64_t kvol() const { return k[0] * k[1] * k[2]; }
};

void tconv_scatter(const real* cols, const TConvGeom& g, const Tensor& bias, real* out) {
    // cols: {out_ch * kvol, in_voxels}; out: {out_ch, in_dims*k}
    const auto& d = g.in_dims;
    const int64_t oy = d[1] * g.k[1], oz = d[2] * g.k[2];
    for (int64_t co = 0; co < g.out_ch; ++co) {
        real* ochan = out + co * (d[0] * g.k[0]) * oy * oz;
        for (int64_t kx = 0; kx < g.k[0]; ++kx)
            for (int64_t ky = 0; ky < g.k[1]; ++ky)
                for (int64_t kz = 0; kz < g.k[2]; ++kz) {
                    const real* src = cols + (((co * g.k[0] + kx) * g.k[1] + ky) * g.k[2] + kz) * g.in_voxels();
                    int64_t i = 0;
                    for (int64_t x = 0; x < d[0]; ++x)
                        for (int64_t y = 0; y < d[1]; ++y) {
                            real* line = ochan + ((x * g.k[0] + kx) * oy + y * g.k[1] + ky) * oz + kz;
                            for (int64_t z = 0; z < d[2]; ++z, ++i) line[z * g.k[2]] = src[i] + bias[co];
                        }
                }
    }
}

void tconv_gather(const real* dout, const TConvGeom& g, real* dcols) {
    const auto& d = g.in_dims;
    const int64_t oy = d[1] * g.k[1], oz = d[2] * g.k[2];
    for (int64_t co = 0; co < g.out_ch; ++co) {
        const real* ochan = dout + co * (d[0] * g.k[0]) * oy * oz;
        for (int64_t kx = 0; kx < g.k[0]; ++kx)
            for (int64_t ky = 0; ky < g.k[1]; ++ky)
                for (int64_t kz = 0; kz < g.k[2]; ++kz) {
                    real* dst = dcols + (((co * g.k[0] + kx) * g.k[1] + ky) * g.k[2] + kz) * g.in_voxels();
                    int64_t i = 0;
                    for (int64_t x = 0; x < d[0]; ++x)
                        for (int64_t y = 0; y < d[1]; ++y) {
                            const real* line = ochan + ((x * g.k[0] + kx) * oy + y * g.k[1] + ky) * oz + kz;
                            for (int64_t z = 0; z < d[2]; ++z, ++i) dst[i] = line[z * g.k[2]];
                        }
                }
    }
}

void tconv_forward_sample(const real* in, const Tensor& weight, const Tensor& bias, const TConvGeom& g,
                          real* out, std::vector<real>& scratch) {
    scratch.resize(static_cast<size_t>(g.out_ch * g.kvol() * g.in_voxels()));
    // W reshaped {in_ch, out_ch*kvol}; cols = W^T * in
    ConstMapMat W(weight.data(), g.in_ch, g.out_ch * g.kvol());
    ConstMapMat I(in, g.in_ch, g.in_voxels());
    MapMat cols(scratch.data(), g.out_ch * g.kvol(), g.in_voxels());
    cols.noalias() = W.transpose() * I;
    tconv_scatter(scratch.data(), g, bias, out);
}

void tconv_backward_sample(const real* in, const real* dout, const Tensor& weight, const TConvGeom& g,
                           real* din, real* dweight, real* dbias, std::vector<real>& scratch) {
    scratch.resize(static_cast<size_t>(g.out_ch * g.kvol() * g.in_voxels()));
    tconv_gather(dout, g, scratch.data());
    ConstMapMat dcols(scratch.data(), g.out_ch * g.kvol(), g.in_voxels());
    ConstMapMat I(in, g.in_ch, g.in_voxels());

    MapMat dW(dweight, g.in_ch, g.out_ch * g.kvol());
    dW.noalias() += I * dcols.transpose();

    // Bias hits every output voxel once.
    const int64_t per_out_ch = g.kvol() * g.in_voxels();
    for (int64_t co = 0; co < g.out_ch; ++co) {
        real s = 0;
        const real* base = dout + co * per_out_ch;
        for (int64_t i = 0; i < per_out_ch; ++i) s += base[i];
        dbias[co] += s;
    }

    if (din) {
        ConstMapMat W(weight.data(), g.in_ch, g.out_ch * g.kvol());
        MapMat dI(din, g.in_ch, g.in_voxels());
        dI.noalias() += W * dcols;
    }
}

}  // namespace

// ===========================================================================
// Graph: nodes over tensor slots
// ===========================================================================

namespace {

struct Node {
    enum class Kind { conv, tconv, instnorm, leaky, add, concat } kind;
    int in0 = -1, in1 = -1;  // slot ids
    int out = -1;
    // conv / tconv
    std::string weight, bias;
    std::array<int64_t, 3> stride{1, 1, 1};
    std::array<int64_t, 3> k{3, 3, 3};
    std::array<int64_t, 3> pad{1, 1, 1};
    int64_t in_ch = 0, out_ch = 0;
    // instnorm
    std::string scale, offset;
};

struct ParamSpec {
    std::string name;
    std::vector<int64_t> shape;
    enum class Init { he_conv, he_tconv, zeros, ones } init;
};

}  // namespace

struct Workspace::Data {
    std::vector<Tensor> slots;
    // instnorm caches, indexed by node id: mean and invstd per (b, c)
    std::map<int, std::pair<std::vector<real>, std::vector<real>>> norm_stats;
    std::array<int64_t, 4> input_shape{0, 0, 0, 0};  // {B, C, X, Y, Z} minus batch
    int64_t batch = 0;
};

Workspace::Workspace() : data(std::make_unique<Data>()) {}
Workspace::~Workspace() = default;
Workspace::Workspace(Workspace&&) noexcept = default;
Workspace& Workspace::operator=(Workspace&&) noexcept = default;

struct ResUNet::Impl {
    NetworkSpec spec;
    std::vector<Node> nodes;
    std::vector<ParamSpec> param_specs;
    int input_slot = 0;
    int num_slots = 1;
    std::vector<int> head_slots;            // per head level, ascending level
    std::vector<int> encoder_out_slots;     // per level

    int new_slot() { return num_slots++; }

    int add_conv(const std::string& prefix, int in_slot, int64_t in_ch, int64_t out_ch,
                 std::array<int64_t, 3> k, std::array<int64_t, 3> stride, std::array<int64_t, 3> pad) {
        Node n;
        n.kind = Node::Kind::conv;
        n.in0 = in_slot;
        n.out = new_slot();
        n.weight = prefix + ".weight";
        n.bias = prefix + ".bias";
        n.k = k;
        n.stride = stride;
        n.pad = pad;
        n.in_ch = in_ch;
        n.out_ch = out_ch;
        param_specs.push_back({n.weight, {out_ch, in_ch, k[0], k[1], k[2]}, ParamSpec::Init::he_conv});
        param_specs.push_back({n.bias, {out_ch}, ParamSpec::Init::zeros});
        nodes.push_back(n);
        return n.out;
    }

    int add_tconv(const std::string& prefix, int in_slot, int64_t in_ch, int64_t out_ch,
                  std::array<int64_t, 3> k) {
        Node n;
        n.kind = Node::Kind::tconv;
        n.in0 = in_slot;
        n.out = new_slot();
        n.weight = prefix + ".weight";
        n.bias = prefix + ".bias";
        n.k = k;
        n.stride = k;
        n.in_ch = in_ch;
        n.out_ch = out_ch;
        param_specs.push_back({n.weight, {in_ch, out_ch, k[0], k[1], k[2]}, ParamSpec::Init::he_tconv});
        param_specs.push_back({n.bias, {out_ch}, ParamSpec::Init::zeros});
        nodes.push_back(n);
        return n.out;
    }

    int add_norm(const std::string& prefix, int in_slot, int64_t ch) {
        Node n;
        n.kind = Node::Kind::instnorm;
        n.in0 = in_slot;
        n.out = new_slot();
        n.scale = prefix + ".scale";
        n.offset = prefix + ".offset";
        n.in_ch = n.out_ch = ch;
        param_specs.push_back({n.scale, {ch}, ParamSpec::Init::ones});
        param_specs.push_back({n.offset, {ch}, ParamSpec::Init::zeros});
        nodes.push_back(n);
        return n.out;
    }

    int add_leaky(int in_slot) {
        Node n;
        n.kind = Node::Kind::leaky;
        n.in0 = in_slot;
        n.out = new_slot();
        nodes.push_back(n);
        return n.out;
    }

    int add_add(int a, int b) {
        Node n;
        n.kind = Node::Kind::add;
        n.in0 = a;
        n.in1 = b;
        n.out = new_slot();
        nodes.push_back(n);
        return n.out;
    }

    int add_concat(int a, int b) {
        Node n;
        n.kind = Node::Kind::concat;
        n.in0 = a;
        n.in1 = b;
        n.out = new_slot();
        nodes.push_back(n);
        return n.out;
    }

    // conv3 + IN + leaky
    int conv_block(const std::string& prefix, int in_slot, int64_t in_ch, int64_t out_ch,
                   std::array<int64_t, 3> stride) {
        int s = add_conv(prefix + ".conv", in_slot, in_ch, out_ch, {3, 3, 3}, stride, {1, 1, 1});
        s = add_norm(prefix + ".norm", s, out_ch);
        return add_leaky(s);
    }

    // Two conv3+IN stages with a leaky between, plus identity skip. No
    // activation after the add, so a zeroed residual branch is an identity.
    int residual_block(const std::string& prefix, int in_slot, int64_t ch) {
        int s = add_conv(prefix + ".conv1", in_slot, ch, ch, {3, 3, 3}, {1, 1, 1}, {1, 1, 1});
        s = add_norm(prefix + ".norm1", s, ch);
        s = add_leaky(s);
        s = add_conv(prefix + ".conv2", s, ch, ch, {3, 3, 3}, {1, 1, 1}, {1, 1, 1});
        s = add_norm(prefix + ".norm2", s, ch);
        return add_add(in_slot, s);
    }

    void build_graph() {
        const auto& F = spec.filters_per_level;
        int s = input_slot;

        // Encoder
        s = conv_block("encoder.stem", s, 3, F[0], {1, 1, 1});
        for (int b = 0; b < spec.blocks_per_level[0]; ++b)
            s = residual_block("encoder.l0.block" + std::to_string(b), s, F[0]);
        encoder_out_slots.push_back(s);
        for (int l = 1; l < spec.levels; ++l) {
            const auto& st = spec.downsample_strides[static_cast<size_t>(l - 1)];
            s = conv_block("encoder.down" + std::to_string(l - 1), s, F[static_cast<size_t>(l - 1)],
                           F[static_cast<size_t>(l)],
                           {static_cast<int64_t>(st[0]), static_cast<int64_t>(st[1]),
                            static_cast<int64_t>(st[2])});
            for (int b = 0; b < spec.blocks_per_level[static_cast<size_t>(l)]; ++b)
                s = residual_block("encoder.l" + std::to_string(l) + ".block" + std::to_string(b), s,
                                   F[static_cast<size_t>(l)]);
            encoder_out_slots.push_back(s);
        }

        // Decoder
        std::vector<int> decoder_out_slots(static_cast<size_t>(spec.levels), -1);
        for (int l = spec.levels - 2; l >= 0; --l) {
            const std::string prefix = "decoder.l" + std::to_string(l);
            const int64_t upper_ch = F[static_cast<size_t>(l + 1)];
            const int64_t half_ch = std::max<int64_t>(1, upper_ch / 2);
            const auto& st = spec.downsample_strides[static_cast<size_t>(l)];
            int d = add_conv(prefix + ".reduce", s, upper_ch, half_ch, {1, 1, 1}, {1, 1, 1}, {0, 0, 0});
            d = add_tconv(prefix + ".up", d, half_ch, half_ch,
                          {static_cast<int64_t>(st[0]), static_cast<int64_t>(st[1]),
                           static_cast<int64_t>(st[2])});
            d = add_concat(d, encoder_out_slots[static_cast<size_t>(l)]);
            d = conv_block(prefix, d, half_ch + F[static_cast<size_t>(l)], F[static_cast<size_t>(l)],
                           {1, 1, 1});
            decoder_out_slots[static_cast<size_t>(l)] = d;
            s = d;
        }

        // Output heads, full resolution first.
        for (int h = 0; h < spec.num_heads(); ++h) {
            const int src = decoder_out_slots[static_cast<size_t>(h)];
            const int slot = add_conv("head.l" + std::to_string(h), src, F[static_cast<size_t>(h)],
                                      spec.num_classes, {1, 1, 1}, {1, 1, 1}, {0, 0, 0});
            head_slots.push_back(slot);
        }
    }
};

ResUNet::ResUNet(NetworkSpec spec) : impl_(std::make_unique<Impl>()) {
    spec.validate();
    impl_->spec = std::move(spec);
    impl_->build_graph();
}

ResUNet::~ResUNet() = default;
ResUNet::ResUNet(ResUNet&&) noexcept = default;
ResUNet& ResUNet::operator=(ResUNet&&) noexcept = default;

const NetworkSpec& ResUNet::spec() const { return impl_->spec; }

ParameterSet ResUNet::init_params(uint64_t seed) const {
    ParameterSet params;
    Rng rng(seed);
    const double gain = std::sqrt(2.0 / (1.0 + impl_->spec.leaky_slope * impl_->spec.leaky_slope));
    for (const auto& ps : impl_->param_specs) {
        Tensor t(ps.shape);
        switch (ps.init) {
            case ParamSpec::Init::he_conv:
            case ParamSpec::Init::he_tconv: {
                // fan-in = receptive inputs per output unit
                int64_t fan_in = 1;
                for (size_t i = 1; i < ps.shape.size(); ++i) fan_in *= ps.shape[i];
                if (ps.init == ParamSpec::Init::he_tconv) {
                    // layout {in, out, k...}: fan-in is in_ch per kernel cell
                    fan_in = ps.shape[0];
                }
                const double std_dev = gain / std::sqrt(static_cast<double>(fan_in));
                for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, std_dev);
                break;
            }
            case ParamSpec::Init::zeros:
                break;
            case ParamSpec::Init::ones:
                t.fill(1.0);
                break;
        }
        params.add(ps.name, std::move(t));
    }
    return params;
}

namespace {

std::array<int64_t, 3> slot_spatial(const Tensor& t) { return {t.dim(2), t.dim(3), t.dim(4)}; }

}  // namespace

ForwardOutputs ResUNet::forward(const ParameterSet& params, const Tensor& input, Mode mode) const {
    Workspace ws;
    return forward(params, input, mode, ws);
}

ForwardOutputs ResUNet::forward(const ParameterSet& params, const Tensor& input, Mode mode,
                                Workspace& ws) const {
    (void)mode;  // instance statistics are always per-sample; no dropout
    if (input.rank() != 5 || input.dim(1) != 3)
        throw std::invalid_argument("forward: input must be {B,3,X,Y,Z}, got " +
                                    shape_to_string(input.shape()));
    // Validates divisibility up front with a clear message.
    shape_plan(impl_->spec, {input.dim(1), input.dim(2), input.dim(3), input.dim(4)});

    const int64_t B = input.dim(0);
    auto& slots = ws.data->slots;
    slots.assign(static_cast<size_t>(impl_->num_slots), Tensor());
    ws.data->norm_stats.clear();
    ws.data->batch = B;
    slots[static_cast<size_t>(impl_->input_slot)] = input;

    std::vector<real> scratch;
    const double slope = impl_->spec.leaky_slope;
    const double eps = impl_->spec.instnorm_eps;

    for (size_t ni = 0; ni < impl_->nodes.size(); ++ni) {
        const Node& n = impl_->nodes[ni];
        const Tensor& a = slots[static_cast<size_t>(n.in0)];
        switch (n.kind) {
            case Node::Kind::conv: {
                ConvGeom g;
                g.in_ch = n.in_ch;
                g.out_ch = n.out_ch;
                g.in_dims = slot_spatial(a);
                g.k = n.k;
                g.stride = n.stride;
                g.pad = n.pad;
                g.out_dims = conv_out_dims(g.in_dims, g.k, g.stride, g.pad);
                Tensor out({B, g.out_ch, g.out_dims[0], g.out_dims[1], g.out_dims[2]});
                const Tensor& w = params.at(n.weight);
                const Tensor& bias = params.at(n.bias);
                for (int64_t b = 0; b < B; ++b)
                    conv3d_forward_sample(a.data() + b * g.in_ch * g.in_voxels(), w, bias, g,
                                          out.data() + b * g.out_ch * g.out_voxels(), scratch);
                slots[static_cast<size_t>(n.out)] = std::move(out);
                break;
            }
            case Node::Kind::tconv: {
                TConvGeom g;
                g.in_ch = n.in_ch;
                g.out_ch = n.out_ch;
                g.in_dims = slot_spatial(a);
                g.k = n.k;
                Tensor out({B, g.out_ch, g.in_dims[0] * g.k[0], g.in_dims[1] * g.k[1],
                            g.in_dims[2] * g.k[2]});
                const Tensor& w = params.at(n.weight);
                const Tensor& bias = params.at(n.bias);
                const int64_t out_per_b = g.out_ch * g.in_voxels() * g.kvol();
                for (int64_t b = 0; b < B; ++b)
                    tconv_forward_sample(a.data() + b * g.in_ch * g.in_voxels(), w, bias, g,
                                         out.data() + b * out_per_b, scratch);
                slots[static_cast<size_t>(n.out)] = std::move(out);
                break;
            }
            case Node::Kind::instnorm: {
                const int64_t C = n.in_ch;
                const int64_t V = a.numel() / (B * C);
                Tensor out(a.shape());
                auto& [means, invstds] = ws.data->norm_stats[static_cast<int>(ni)];
                means.assign(static_cast<size_t>(B * C), 0);
                invstds.assign(static_cast<size_t>(B * C), 0);
                const Tensor& scale = params.at(n.scale);
                const Tensor& offset = params.at(n.offset);
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t c = 0; c < C; ++c) {
                        const real* src = a.data() + (b * C + c) * V;
                        real* dst = out.data() + (b * C + c) * V;
                        double mean = 0;
                        for (int64_t i = 0; i < V; ++i) mean += src[i];
                        mean /= static_cast<double>(V);
                        double var = 0;
                        for (int64_t i = 0; i < V; ++i) {
                            const double d = src[i] - mean;
                            var += d * d;
                        }
                        var /= static_cast<double>(V);
                        const double invstd = 1.0 / std::sqrt(var + eps);
                        means[static_cast<size_t>(b * C + c)] = mean;
                        invstds[static_cast<size_t>(b * C + c)] = invstd;
                        const double sc = scale[c], of = offset[c];
                        for (int64_t i = 0; i < V; ++i) dst[i] = (src[i] - mean) * invstd * sc + of;
                    }
                slots[static_cast<size_t>(n.out)] = std::move(out);
                break;
            }
            case Node::Kind::leaky: {
                Tensor out(a.shape());
                for (int64_t i = 0; i < a.numel(); ++i)
                    out[i] = a[i] > 0 ? a[i] : slope * a[i];
                slots[static_cast<size_t>(n.out)] = std::move(out);
                break;
            }
            case Node::Kind::add: {
                const Tensor& b2 = slots[static_cast<size_t>(n.in1)];
                Tensor out(a.shape());
                for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b2[i];
                slots[static_cast<size_t>(n.out)] = std::move(out);
                break;
            }
            case Node::Kind::concat: {
                const Tensor& b2 = slots[static_cast<size_t>(n.in1)];
                const int64_t Ca = a.dim(1), Cb = b2.dim(1);
                const int64_t V = a.dim(2) * a.dim(3) * a.dim(4);
                if (b2.dim(2) != a.dim(2) || b2.dim(3) != a.dim(3) || b2.dim(4) != a.dim(4))
                    throw std::runtime_error("forward: concat spatial mismatch");
                Tensor out({B, Ca + Cb, a.dim(2), a.dim(3), a.dim(4)});
                for (int64_t b = 0; b < B; ++b) {
                    std::memcpy(out.data() + b * (Ca + Cb) * V, a.data() + b * Ca * V,
                                sizeof(real) * static_cast<size_t>(Ca * V));
                    std::memcpy(out.data() + (b * (Ca + Cb) + Ca) * V, b2.data() + b * Cb * V,
                                sizeof(real) * static_cast<size_t>(Cb * V));
                }
                slots[static_cast<size_t>(n.out)] = std::move(out);
                break;
            }
        }
    }

    ForwardOutputs outs;
    for (int slot : impl_->head_slots) outs.logits.push_back(slots[static_cast<size_t>(slot)]);
    for (const Tensor& t : outs.logits)
        for (int64_t i = 0; i < t.numel(); ++i)
            if (!std::isfinite(t[i])) throw std::runtime_error("forward: non-finite logit produced");
    return outs;
}

GradientMap ResUNet::backward(const ParameterSet& params, const Workspace& ws,
                              const std::vector<Tensor>& dlogits) const {
    const auto& slots = ws.data->slots;
    if (slots.empty()) throw std::runtime_error("backward: workspace has no cached forward pass");
    if (dlogits.size() != impl_->head_slots.size())
        throw std::invalid_argument("backward: expected " + std::to_string(impl_->head_slots.size()) +
                                    " head gradients, got " + std::to_string(dlogits.size()));

    GradientMap grads;
    for (const auto& ps : impl_->param_specs) grads.add(ps.name, Tensor(ps.shape));

    std::vector<Tensor> dslots(slots.size());
    auto ensure = [&](int slot) -> Tensor& {
        Tensor& t = dslots[static_cast<size_t>(slot)];
        if (t.numel() == 0) t = Tensor(slots[static_cast<size_t>(slot)].shape());
        return t;
    };

    for (size_t h = 0; h < dlogits.size(); ++h) {
        const int slot = impl_->head_slots[h];
        if (!dlogits[h].same_shape(slots[static_cast<size_t>(slot)]))
            throw std::invalid_argument("backward: head gradient " + std::to_string(h) +
                                        " shape mismatch");
        Tensor& d = ensure(slot);
        for (int64_t i = 0; i < d.numel(); ++i) d[i] += dlogits[h][i];
    }

    const int64_t B = ws.data->batch;
    std::vector<real> scratch, scratch2;
    const double slope = impl_->spec.leaky_slope;

    for (size_t ri = impl_->nodes.size(); ri-- > 0;) {
        const Node& n = impl_->nodes[ri];
        Tensor& dout = dslots[static_cast<size_t>(n.out)];
        if (dout.numel() == 0) continue;  // loss never reached this node
        const Tensor& a = slots[static_cast<size_t>(n.in0)];

        switch (n.kind) {
            case Node::Kind::conv: {
                ConvGeom g;
                g.in_ch = n.in_ch;
                g.out_ch = n.out_ch;
                g.in_dims = slot_spatial(a);
                g.k = n.k;
                g.stride = n.stride;
                g.pad = n.pad;
                g.out_dims = conv_out_dims(g.in_dims, g.k, g.stride, g.pad);
                Tensor& din = ensure(n.in0);
                Tensor& dw = grads.at(n.weight);
                Tensor& db = grads.at(n.bias);
                const bool need_din = n.in0 != impl_->input_slot;
                for (int64_t b = 0; b < B; ++b)
                    conv3d_backward_sample(a.data() + b * g.in_ch * g.in_voxels(),
                                           dout.data() + b * g.out_ch * g.out_voxels(),
                                           params.at(n.weight), g,
                                           need_din ? din.data() + b * g.in_ch * g.in_voxels() : nullptr,
                                           dw.data(), db.data(), scratch, scratch2);
                break;
            }
            case Node::Kind::tconv: {
                TConvGeom g;
                g.in_ch = n.in_ch;
                g.out_ch = n.out_ch;
                g.in_dims = slot_spatial(a);
                g.k = n.k;
                Tensor& din = ensure(n.in0);
                Tensor& dw = grads.at(n.weight);
                Tensor& db = grads.at(n.bias);
                const int64_t out_per_b = g.out_ch * g.in_voxels() * g.kvol();
                for (int64_t b = 0; b < B; ++b)
                    tconv_backward_sample(a.data() + b * g.in_ch * g.in_voxels(),
                                          dout.data() + b * out_per_b, params.at(n.weight), g,
                                          din.data() + b * g.in_ch * g.in_voxels(), dw.data(), db.data(),
                                          scratch);
                break;
            }
            case Node::Kind::instnorm: {
                const int64_t C = n.in_ch;
                const int64_t V = a.numel() / (B * C);
                const auto& [means, invstds] = ws.data->norm_stats.at(static_cast<int>(ri));
                Tensor& din = ensure(n.in0);
                Tensor& dscale = grads.at(n.scale);
                Tensor& doffset = grads.at(n.offset);
                const Tensor& scale = params.at(n.scale);
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t c = 0; c < C; ++c) {
                        const real* x = a.data() + (b * C + c) * V;
                        const real* dy = dout.data() + (b * C + c) * V;
                        real* dx = din.data() + (b * C + c) * V;
                        const double mean = means[static_cast<size_t>(b * C + c)];
                        const double invstd = invstds[static_cast<size_t>(b * C + c)];
                        double sum_dy = 0, sum_dy_xhat = 0, sum_dy_for_offset = 0;
                        for (int64_t i = 0; i < V; ++i) {
                            const double xhat = (x[i] - mean) * invstd;
                            sum_dy += dy[i];
                            sum_dy_xhat += dy[i] * xhat;
                            sum_dy_for_offset += dy[i];
                        }
                        dscale[c] += sum_dy_xhat;
                        doffset[c] += sum_dy_for_offset;
                        const double g = scale[c];
                        const double mean_dy = sum_dy / static_cast<double>(V);
                        const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(V);
                        for (int64_t i = 0; i < V; ++i) {
                            const double xhat = (x[i] - mean) * invstd;
                            dx[i] += g * invstd * (dy[i] - mean_dy - xhat * mean_dy_xhat);
                        }
                    }
                break;
            }
            case Node::Kind::leaky: {
                Tensor& din = ensure(n.in0);
                for (int64_t i = 0; i < a.numel(); ++i)
                    din[i] += dout[i] * (a[i] > 0 ? 1.0 : slope);
                break;
            }
            case Node::Kind::add: {
                Tensor& d0 = ensure(n.in0);
                for (int64_t i = 0; i < dout.numel(); ++i) d0[i] += dout[i];
                Tensor& d1 = ensure(n.in1);
                for (int64_t i = 0; i < dout.numel(); ++i) d1[i] += dout[i];
                break;
            }
            case Node::Kind::concat: {
                const Tensor& b2 = slots[static_cast<size_t>(n.in1)];
                const int64_t Ca = a.dim(1), Cb = b2.dim(1);
                const int64_t V = a.dim(2) * a.dim(3) * a.dim(4);
                Tensor& d0 = ensure(n.in0);
                Tensor& d1 = ensure(n.in1);
                for (int64_t b = 0; b < B; ++b) {
                    const real* src0 = dout.data() + b * (Ca + Cb) * V;
                    const real* src1 = dout.data() + (b * (Ca + Cb) + Ca) * V;
                    real* p0 = d0.data() + b * Ca * V;
                    real* p1 = d1.data() + b * Cb * V;
                    for (int64_t i = 0; i < Ca * V; ++i) p0[i] += src0[i];
                    for (int64_t i = 0; i < Cb * V; ++i) p1[i] += src1[i];
                }
                break;
            }
        }
        // Free this gradient early; nothing downstream reads it again.
        dout = Tensor();
    }
    return grads;
}

ParameterSet build(const NetworkSpec& spec, uint64_t seed) {
    return ResUNet(spec).init_params(seed);
}

ForwardOutputs forward(const ParameterSet& params, const NetworkSpec& spec, const Tensor& input,
                       Mode mode) {
    return ResUNet(spec).forward(params, input, mode);
}

// ===========================================================================
// Spec JSON + checkpoint archive
// ===========================================================================

std::string spec_to_json_string(const NetworkSpec& spec) {
    json j;
    j["levels"] = spec.levels;
    j["blocks_per_level"] = spec.blocks_per_level;
    j["filters_per_level"] = spec.filters_per_level;
    j["downsample_strides"] = spec.downsample_strides;
    j["kernel"] = spec.kernel;
    j["leaky_slope"] = spec.leaky_slope;
    j["instnorm_eps"] = spec.instnorm_eps;
    j["num_classes"] = spec.num_classes;
    j["deep_supervision_levels"] = spec.deep_supervision_levels;
    if (!spec.ds_weights.empty()) j["ds_weights"] = spec.ds_weights;
    return j.dump();
}

NetworkSpec spec_from_json_string(const std::string& text) {
    json j = json::parse(text);
    NetworkSpec spec;
    spec.levels = j.value("levels", spec.levels);
    if (j.contains("blocks_per_level")) spec.blocks_per_level = j["blocks_per_level"].get<std::vector<int>>();
    if (j.contains("filters_per_level"))
        spec.filters_per_level = j["filters_per_level"].get<std::vector<int>>();
    if (j.contains("downsample_strides"))
        spec.downsample_strides = j["downsample_strides"].get<std::vector<std::array<int, 3>>>();
    spec.kernel = j.value("kernel", spec.kernel);
    spec.leaky_slope = j.value("leaky_slope", spec.leaky_slope);
    spec.instnorm_eps = j.value("instnorm_eps", spec.instnorm_eps);
    spec.num_classes = j.value("num_classes", spec.num_classes);
    spec.deep_supervision_levels = j.value("deep_supervision_levels", spec.deep_supervision_levels);
    if (j.contains("ds_weights")) spec.ds_weights = j["ds_weights"].get<std::vector<double>>();
    spec.validate();
    return spec;
}

namespace ops {

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const std::array<int64_t, 3>& stride, const std::array<int64_t, 3>& pad) {
    if (input.rank() != 5) throw std::invalid_argument("conv3d: input must be {B,C,X,Y,Z}");
    ConvGeom g;
    g.in_ch = input.dim(1);
    g.out_ch = weight.dim(0);
    g.in_dims = {input.dim(2), input.dim(3), input.dim(4)};
    g.k = {weight.dim(2), weight.dim(3), weight.dim(4)};
    g.stride = stride;
    g.pad = pad;
    g.out_dims = conv_out_dims(g.in_dims, g.k, g.stride, g.pad);
    const int64_t B = input.dim(0);
    Tensor out({B, g.out_ch, g.out_dims[0], g.out_dims[1], g.out_dims[2]});
    std::vector<real> scratch;
    for (int64_t b = 0; b < B; ++b)
        conv3d_forward_sample(input.data() + b * g.in_ch * g.in_voxels(), weight, bias, g,
                              out.data() + b * g.out_ch * g.out_voxels(), scratch);
    return out;
}

ConvGrads conv3d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                          const std::array<int64_t, 3>& stride, const std::array<int64_t, 3>& pad) {
    ConvGeom g;
    g.in_ch = input.dim(1);
    g.out_ch = weight.dim(0);
    g.in_dims = {input.dim(2), input.dim(3), input.dim(4)};
    g.k = {weight.dim(2), weight.dim(3), weight.dim(4)};
    g.stride = stride;
    g.pad = pad;
    g.out_dims = conv_out_dims(g.in_dims, g.k, g.stride, g.pad);
    const int64_t B = input.dim(0);
    ConvGrads grads;
    grads.input = Tensor(input.shape());
    grads.weight = Tensor(weight.shape());
    grads.bias = Tensor({g.out_ch});
    std::vector<real> scratch, scratch2;
    for (int64_t b = 0; b < B; ++b)
        conv3d_backward_sample(input.data() + b * g.in_ch * g.in_voxels(),
                               grad_out.data() + b * g.out_ch * g.out_voxels(), weight, g,
                               grads.input.data() + b * g.in_ch * g.in_voxels(), grads.weight.data(),
                               grads.bias.data(), scratch, scratch2);
    return grads;
}

}  // namespace ops

namespace {
constexpr char kCkptMagic[8] = {'A', 'B', 'S', 'E', 'G', 'C', 'K', '1'};
constexpr uint32_t kCkptVersion = 1;

json params_manifest(const ParameterSet& ps) {
    json arr = json::array();
    for (const auto& [name, t] : ps.items()) {
        json e;
        e["name"] = name;
        e["shape"] = t.shape();
        arr.push_back(e);
    }
    return arr;
}

void write_param_payload(std::ofstream& out, const ParameterSet& ps) {
    for (const auto& [name, t] : ps.items())
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(sizeof(real) * static_cast<size_t>(t.numel())));
}

ParameterSet read_param_payload(std::ifstream& in, const json& manifest, const std::string& path) {
    ParameterSet ps;
    for (const auto& e : manifest) {
        const auto shape = e.at("shape").get<std::vector<int64_t>>();
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(sizeof(real) * static_cast<size_t>(t.numel())));
        if (!in) throw std::runtime_error("checkpoint: truncated payload in " + path);
        ps.add(e.at("name").get<std::string>(), std::move(t));
    }
    return ps;
}
}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json header;
    header["format_version"] = kCkptVersion;
    header["spec"] = json::parse(spec_to_json_string(ckpt.spec));
    header["step"] = ckpt.step;
    header["epoch"] = ckpt.epoch;
    header["params"] = params_manifest(ckpt.params);
    header["has_velocities"] = ckpt.velocities.has_value();
    if (ckpt.velocities) header["velocities"] = params_manifest(*ckpt.velocities);
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write(kCkptMagic, sizeof(kCkptMagic));
    const uint32_t version = kCkptVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    write_param_payload(out, ckpt.params);
    if (ckpt.velocities) write_param_payload(out, *ckpt.velocities);
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw std::runtime_error("checkpoint: " + path + " is not a checkpoint archive");
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kCkptVersion)
        throw std::runtime_error("checkpoint: " + path + " has unsupported version " +
                                 std::to_string(version));
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
    const json header = json::parse(htext);

    Checkpoint ckpt;
    ckpt.spec = spec_from_json_string(header.at("spec").dump());
    ckpt.step = header.at("step").get<int64_t>();
    ckpt.epoch = header.at("epoch").get<int64_t>();
    ckpt.params = read_param_payload(in, header.at("params"), path);
    if (header.value("has_velocities", false))
        ckpt.velocities = read_param_payload(in, header.at("velocities"), path);
    return ckpt;
}

}  // namespace abseg::network
