#include "abseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>
#include <stdexcept>

namespace abseg::preprocess {

real quantile(const Tensor& grid, double q) {
    if (grid.numel() == 0) throw std::invalid_argument("quantile: empty grid");
    if (q < 0.0 || q > 1.0) throw std::invalid_argument("quantile: q outside [0,1]");
    std::vector<real> sorted(grid.storage());
    std::sort(sorted.begin(), sorted.end());
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = static_cast<size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Tensor clip_ct(const Tensor& grid, double lo_q, double hi_q) {
    if (grid.numel() == 0) throw std::invalid_argument("clip_ct: empty grid");
    if (!(lo_q >= 0.0 && lo_q < hi_q && hi_q <= 1.0))
        throw std::invalid_argument("clip_ct: need 0 <= lo_q < hi_q <= 1");
    const real lo = quantile(grid, lo_q);
    const real hi = quantile(grid, hi_q);
    Tensor out(grid.shape());
    for (int64_t i = 0; i < grid.numel(); ++i) out[i] = std::clamp(grid[i], lo, hi);
    return out;
}

Tensor znormalize(const Tensor& grid) {
    if (grid.numel() < 2) throw std::invalid_argument("znormalize: need at least 2 voxels");
    const int64_t n = grid.numel();
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) sum += grid[i];
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = grid[i] - mean;
        ss += d * d;
    }
    const double std_pop = std::sqrt(ss / static_cast<double>(n));
    Tensor out(grid.shape());
    if (std_pop <= 1e-12 * std::max(1.0, std::abs(mean))) {
        std::cerr << "warning: znormalize called on a (near-)constant grid, returning zeros\n";
        return out;
    }
    const double inv = 1.0 / std_pop;
    for (int64_t i = 0; i < n; ++i) out[i] = (grid[i] - mean) * inv;
    return out;
}

Tensor stack_modalities(const MultiModalVolume& volume) {
    volume.validate();
    const auto sh = volume.shape();
    Tensor out({3, sh[0], sh[1], sh[2]});
    const int64_t n = sh[0] * sh[1] * sh[2];
    std::memcpy(out.data(), volume.ct.data(), sizeof(real) * static_cast<size_t>(n));
    std::memcpy(out.data() + n, volume.t1ce.data(), sizeof(real) * static_cast<size_t>(n));
    std::memcpy(out.data() + 2 * n, volume.flair.data(), sizeof(real) * static_cast<size_t>(n));
    return out;
}

Tensor preprocess_case(const MultiModalVolume& volume, double ct_lo_q, double ct_hi_q) {
    MultiModalVolume v;
    v.case_id = volume.case_id;
    v.spacing = volume.spacing;
    v.ct = znormalize(clip_ct(volume.ct, ct_lo_q, ct_hi_q));
    v.t1ce = znormalize(volume.t1ce);
    v.flair = znormalize(volume.flair);
    return stack_modalities(v);
}

PreprocessedCase load_preprocessed_case(const volume_io::DatasetManifest& manifest,
                                        const volume_io::CaseEntry& entry, double ct_lo_q,
                                        double ct_hi_q) {
    PreprocessedCase out;
    MultiModalVolume v = volume_io::load_case_volume(manifest, entry);
    out.case_id = entry.case_id;
    out.spacing = v.spacing;
    out.input = preprocess_case(v, ct_lo_q, ct_hi_q);
    out.labels = volume_io::load_case_labels(manifest, entry);
    return out;
}

namespace {

struct PadPlan {
    std::array<int64_t, 3> padded;
    std::array<int64_t, 3> before;
};

PadPlan pad_plan(const std::array<int64_t, 3>& extent, const std::array<int64_t, 3>& patch) {
    PadPlan p{};
    for (int a = 0; a < 3; ++a) {
        const int64_t need = std::max<int64_t>(0, patch[a] - extent[a]);
        p.before[a] = need / 2;
        p.padded[a] = std::max(extent[a], patch[a]);
    }
    return p;
}

// Symmetric edge padding: coordinates outside [0, n) clamp to the border.
int64_t unpad_clamp(int64_t padded_coord, int64_t before, int64_t n) {
    return std::clamp<int64_t>(padded_coord - before, 0, n - 1);
}

}  // namespace

Patch sample_patch(const Tensor& input, const LabelMap& labels, std::array<int64_t, 3> patch,
                   Rng& rng, double fg_bias) {
    if (input.rank() != 4 || input.dim(0) != 3)
        throw std::invalid_argument("sample_patch: input must be {3,X,Y,Z}");
    const std::array<int64_t, 3> ext{input.dim(1), input.dim(2), input.dim(3)};
    if (ext != labels.shape) throw std::invalid_argument("sample_patch: input/label shape mismatch");
    for (int a = 0; a < 3; ++a)
        if (patch[a] < 1) throw std::invalid_argument("sample_patch: degenerate patch size");

    const PadPlan pp = pad_plan(ext, patch);

    // Candidate origin range in padded coordinates.
    std::array<int64_t, 3> max_origin{};
    for (int a = 0; a < 3; ++a) max_origin[a] = pp.padded[a] - patch[a];

    std::array<int64_t, 3> origin{};
    bool biased = rng.bernoulli(fg_bias);
    if (biased) {
        // Pick a random foreground voxel and a window that contains it.
        std::vector<int64_t> fg;
        for (int64_t i = 0; i < labels.numel(); ++i)
            if (labels.labels[static_cast<size_t>(i)] != 0) fg.push_back(i);
        if (fg.empty()) {
            biased = false;
        } else {
            const int64_t flat = fg[rng.uniform_index(fg.size())];
            const std::array<int64_t, 3> vox{flat / (ext[1] * ext[2]), (flat / ext[2]) % ext[1],
                                             flat % ext[2]};
            for (int a = 0; a < 3; ++a) {
                const int64_t padded_vox = vox[a] + pp.before[a];
                const int64_t lo = std::max<int64_t>(0, padded_vox - patch[a] + 1);
                const int64_t hi = std::min(max_origin[a], padded_vox);
                origin[a] = lo + rng.uniform_int(0, hi - lo);
            }
        }
    }
    if (!biased) {
        for (int a = 0; a < 3; ++a) origin[a] = rng.uniform_int(0, max_origin[a]);
    }

    Patch out;
    out.size = patch;
    out.origin = origin;
    out.inputs = Tensor({3, patch[0], patch[1], patch[2]});
    out.targets.resize(static_cast<size_t>(patch[0] * patch[1] * patch[2]));

    const int64_t vol_n = ext[0] * ext[1] * ext[2];
    for (int64_t px = 0; px < patch[0]; ++px) {
        const int64_t sx = unpad_clamp(origin[0] + px, pp.before[0], ext[0]);
        for (int64_t py = 0; py < patch[1]; ++py) {
            const int64_t sy = unpad_clamp(origin[1] + py, pp.before[1], ext[1]);
            for (int64_t pz = 0; pz < patch[2]; ++pz) {
                const int64_t sz = unpad_clamp(origin[2] + pz, pp.before[2], ext[2]);
                const int64_t src = (sx * ext[1] + sy) * ext[2] + sz;
                const int64_t dst = (px * patch[1] + py) * patch[2] + pz;
                for (int64_t c = 0; c < 3; ++c)
                    out.inputs[c * patch[0] * patch[1] * patch[2] + dst] = input[c * vol_n + src];
                out.targets[static_cast<size_t>(dst)] = labels.labels[static_cast<size_t>(src)];
            }
        }
    }
    return out;
}

void AugmentationPolicy::validate() const {
    if (scale_min > scale_max || gamma_min > gamma_max)
        throw std::invalid_argument("AugmentationPolicy: range bounds out of order");
    for (double p : {mirror_prob, p_rotate_scale, p_gamma, p_brightness})
        if (p < 0.0 || p > 1.0) throw std::invalid_argument("AugmentationPolicy: probability outside [0,1]");
    if (scale_min <= 0.0) throw std::invalid_argument("AugmentationPolicy: scale must be positive");
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 matmul(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += a[i][k] * b[k][j];
            r[i][j] = s;
        }
    return r;
}

Mat3 rotation_matrix(double ax, double ay, double az) {
    const double cx = std::cos(ax), sx = std::sin(ax);
    const double cy = std::cos(ay), sy = std::sin(ay);
    const double cz = std::cos(az), sz = std::sin(az);
    const Mat3 rx{{{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}}};
    const Mat3 ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
    const Mat3 rz{{{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}}};
    return matmul(rx, matmul(ry, rz));
}

Mat3 transpose(const Mat3& m) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r[i][j] = m[j][i];
    return r;
}

double trilinear(const Tensor& vol, int64_t c, const std::array<int64_t, 3>& sz, double x, double y,
                 double z) {
    // Outside the patch samples as 0 (inputs are z-scored, so 0 is the mean).
    const int64_t x0 = static_cast<int64_t>(std::floor(x));
    const int64_t y0 = static_cast<int64_t>(std::floor(y));
    const int64_t z0 = static_cast<int64_t>(std::floor(z));
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    const double fz = z - static_cast<double>(z0);
    double acc = 0.0;
    for (int dx = 0; dx < 2; ++dx)
        for (int dy = 0; dy < 2; ++dy)
            for (int dz = 0; dz < 2; ++dz) {
                const int64_t xx = x0 + dx, yy = y0 + dy, zz = z0 + dz;
                if (xx < 0 || xx >= sz[0] || yy < 0 || yy >= sz[1] || zz < 0 || zz >= sz[2]) continue;
                const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
                acc += w * vol[((c * sz[0] + xx) * sz[1] + yy) * sz[2] + zz];
            }
    return acc;
}

}  // namespace

Patch augment(const Patch& patch, const AugmentationPolicy& policy, Rng& rng) {
    policy.validate();
    Patch out = patch;
    const auto sz = patch.size;
    const int64_t n = sz[0] * sz[1] * sz[2];

    // Rotation + scale share one resampling pass.
    if (rng.bernoulli(policy.p_rotate_scale)) {
        const double deg2rad = 3.14159265358979323846 / 180.0;
        const double ax = rng.uniform(-policy.rotation_deg[0], policy.rotation_deg[0]) * deg2rad;
        const double ay = rng.uniform(-policy.rotation_deg[1], policy.rotation_deg[1]) * deg2rad;
        const double az = rng.uniform(-policy.rotation_deg[2], policy.rotation_deg[2]) * deg2rad;
        const double zoom = rng.uniform(policy.scale_min, policy.scale_max);
        const Mat3 inv = transpose(rotation_matrix(ax, ay, az));  // inverse of a rotation
        const std::array<double, 3> ctr{(static_cast<double>(sz[0]) - 1) / 2.0,
                                        (static_cast<double>(sz[1]) - 1) / 2.0,
                                        (static_cast<double>(sz[2]) - 1) / 2.0};
        Tensor resampled({3, sz[0], sz[1], sz[2]});
        std::vector<int32_t> rtargets(static_cast<size_t>(n), 0);
        for (int64_t x = 0; x < sz[0]; ++x)
            for (int64_t y = 0; y < sz[1]; ++y)
                for (int64_t z = 0; z < sz[2]; ++z) {
                    const double ux = (static_cast<double>(x) - ctr[0]) / zoom;
                    const double uy = (static_cast<double>(y) - ctr[1]) / zoom;
                    const double uz = (static_cast<double>(z) - ctr[2]) / zoom;
                    const double srcx = inv[0][0] * ux + inv[0][1] * uy + inv[0][2] * uz + ctr[0];
                    const double srcy = inv[1][0] * ux + inv[1][1] * uy + inv[1][2] * uz + ctr[1];
                    const double srcz = inv[2][0] * ux + inv[2][1] * uy + inv[2][2] * uz + ctr[2];
                    const int64_t dst = (x * sz[1] + y) * sz[2] + z;
                    for (int64_t c = 0; c < 3; ++c)
                        resampled[c * n + dst] = trilinear(out.inputs, c, sz, srcx, srcy, srcz);
                    const int64_t nx = static_cast<int64_t>(std::llround(srcx));
                    const int64_t ny = static_cast<int64_t>(std::llround(srcy));
                    const int64_t nz = static_cast<int64_t>(std::llround(srcz));
                    if (nx >= 0 && nx < sz[0] && ny >= 0 && ny < sz[1] && nz >= 0 && nz < sz[2])
                        rtargets[static_cast<size_t>(dst)] = out.target_at(nx, ny, nz);
                }
        out.inputs = std::move(resampled);
        out.targets = std::move(rtargets);
    }

    // Mirror on allowed axes only.
    for (int a = 0; a < 3; ++a) {
        if (!policy.mirror_axes[static_cast<size_t>(a)]) continue;
        if (!rng.bernoulli(policy.mirror_prob)) continue;
        Tensor flipped({3, sz[0], sz[1], sz[2]});
        std::vector<int32_t> ftargets(static_cast<size_t>(n));
        for (int64_t x = 0; x < sz[0]; ++x)
            for (int64_t y = 0; y < sz[1]; ++y)
                for (int64_t z = 0; z < sz[2]; ++z) {
                    const int64_t mx = (a == 0) ? sz[0] - 1 - x : x;
                    const int64_t my = (a == 1) ? sz[1] - 1 - y : y;
                    const int64_t mz = (a == 2) ? sz[2] - 1 - z : z;
                    const int64_t dst = (x * sz[1] + y) * sz[2] + z;
                    const int64_t src = (mx * sz[1] + my) * sz[2] + mz;
                    for (int64_t c = 0; c < 3; ++c) flipped[c * n + dst] = out.inputs[c * n + src];
                    ftargets[static_cast<size_t>(dst)] = out.targets[static_cast<size_t>(src)];
                }
        out.inputs = std::move(flipped);
        out.targets = std::move(ftargets);
    }

    // Gamma on a min-max rescaled copy, then inverse-rescaled, per channel.
    if (rng.bernoulli(policy.p_gamma)) {
        const double g = rng.uniform(policy.gamma_min, policy.gamma_max);
        for (int64_t c = 0; c < 3; ++c) {
            real lo = out.inputs[c * n], hi = out.inputs[c * n];
            for (int64_t i = 0; i < n; ++i) {
                lo = std::min(lo, out.inputs[c * n + i]);
                hi = std::max(hi, out.inputs[c * n + i]);
            }
            const double range = hi - lo;
            if (range <= 0) continue;
            for (int64_t i = 0; i < n; ++i) {
                const double v = (out.inputs[c * n + i] - lo) / range;
                out.inputs[c * n + i] = lo + range * std::pow(v, g);
            }
        }
    }

    // Additive brightness: one offset per channel, scaled by channel std.
    if (rng.bernoulli(policy.p_brightness)) {
        for (int64_t c = 0; c < 3; ++c) {
            double mean = 0.0;
            for (int64_t i = 0; i < n; ++i) mean += out.inputs[c * n + i];
            mean /= static_cast<double>(n);
            double ss = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                const double d = out.inputs[c * n + i] - mean;
                ss += d * d;
            }
            const double sd = std::sqrt(ss / static_cast<double>(n));
            const double offset = rng.normal(0.0, policy.brightness_sigma * sd);
            for (int64_t i = 0; i < n; ++i) out.inputs[c * n + i] += offset;
        }
    }

    return out;
}

PatchBatch collate(const std::vector<Patch>& patches) {
    if (patches.empty()) throw std::invalid_argument("collate: empty batch");
    const auto sz = patches.front().size;
    for (const auto& p : patches)
        if (p.size != sz) throw std::invalid_argument("collate: mixed patch sizes");
    const int64_t B = static_cast<int64_t>(patches.size());
    const int64_t n = sz[0] * sz[1] * sz[2];

    PatchBatch batch;
    batch.batch = B;
    batch.size = sz;
    batch.inputs = Tensor({B, 3, sz[0], sz[1], sz[2]});
    batch.targets.resize(static_cast<size_t>(B * n));
    for (int64_t b = 0; b < B; ++b) {
        std::memcpy(batch.inputs.data() + b * 3 * n, patches[static_cast<size_t>(b)].inputs.data(),
                    sizeof(real) * static_cast<size_t>(3 * n));
        std::memcpy(batch.targets.data() + b * n, patches[static_cast<size_t>(b)].targets.data(),
                    sizeof(int32_t) * static_cast<size_t>(n));
    }
    return batch;
}

}  // namespace abseg::preprocess
