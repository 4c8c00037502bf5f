#include "abseg/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "abseg/losses.hpp"
#include "abseg/preprocess.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace abseg::inference {

void ProbabilityMap::validate(double tol) const {
    if (prob.rank() != 4) throw std::invalid_argument("ProbabilityMap: expected {C,X,Y,Z}");
    const int64_t C = prob.dim(0);
    const int64_t V = prob.dim(1) * prob.dim(2) * prob.dim(3);
    for (int64_t i = 0; i < V; ++i) {
        double sum = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            const real p = prob[c * V + i];
            if (p < -tol) throw std::invalid_argument("ProbabilityMap: negative probability");
            sum += p;
        }
        if (std::abs(sum - 1.0) > tol)
            throw std::invalid_argument("ProbabilityMap[" + case_id + "]: channel sum " +
                                        std::to_string(sum) + " at voxel " + std::to_string(i));
    }
}

PredictPatchFn make_patch_predictor(const network::ResUNet& net, const network::ParameterSet& params) {
    return [&net, &params](const Tensor& patch) {
        if (patch.rank() != 4 || patch.dim(0) != 3)
            throw std::invalid_argument("predict: patch must be {3,px,py,pz}");
        Tensor batched = Tensor({1, 3, patch.dim(1), patch.dim(2), patch.dim(3)});
        std::memcpy(batched.data(), patch.data(), sizeof(real) * static_cast<size_t>(patch.numel()));
        const auto outs = net.forward(params, batched, network::Mode::eval);
        const Tensor probs = losses::softmax(outs.logits.front());
        Tensor out({probs.dim(1), probs.dim(2), probs.dim(3), probs.dim(4)});
        std::memcpy(out.data(), probs.data(), sizeof(real) * static_cast<size_t>(out.numel()));
        return out;
    };
}

std::vector<int64_t> window_origins(int64_t extent, int64_t patch, double overlap) {
    if (overlap < 0.0 || overlap >= 1.0) throw std::invalid_argument("window_origins: overlap outside [0,1)");
    if (patch < 1) throw std::invalid_argument("window_origins: degenerate patch");
    if (extent < patch) throw std::invalid_argument("window_origins: extent smaller than patch");
    if (extent == patch) return {0};
    const int64_t max_step =
        std::max<int64_t>(1, static_cast<int64_t>(std::floor(static_cast<double>(patch) * (1.0 - overlap))));
    const int64_t span = extent - patch;
    const int64_t n = (span + max_step - 1) / max_step + 1;
    const double step = static_cast<double>(span) / static_cast<double>(n - 1);
    std::vector<int64_t> origins(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        origins[static_cast<size_t>(i)] = static_cast<int64_t>(std::llround(step * static_cast<double>(i)));
    origins.back() = span;
    return origins;
}

namespace {

struct Padding {
    std::array<int64_t, 3> before{0, 0, 0};
    std::array<int64_t, 3> padded{0, 0, 0};
};

// Edge-replicating pad of a {C,X,Y,Z} tensor up to at least the patch size.
Tensor pad_to_patch(const Tensor& vol, const std::array<int64_t, 3>& patch, Padding& pad) {
    const std::array<int64_t, 3> ext{vol.dim(1), vol.dim(2), vol.dim(3)};
    bool needed = false;
    for (int a = 0; a < 3; ++a) {
        pad.padded[a] = std::max(ext[a], patch[a]);
        pad.before[a] = (pad.padded[a] - ext[a]) / 2;
        needed |= pad.padded[a] != ext[a];
    }
    if (!needed) return vol;
    const int64_t C = vol.dim(0);
    Tensor out({C, pad.padded[0], pad.padded[1], pad.padded[2]});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t x = 0; x < pad.padded[0]; ++x) {
            const int64_t sx = std::clamp<int64_t>(x - pad.before[0], 0, ext[0] - 1);
            for (int64_t y = 0; y < pad.padded[1]; ++y) {
                const int64_t sy = std::clamp<int64_t>(y - pad.before[1], 0, ext[1] - 1);
                for (int64_t z = 0; z < pad.padded[2]; ++z) {
                    const int64_t sz = std::clamp<int64_t>(z - pad.before[2], 0, ext[2] - 1);
                    out[((c * pad.padded[0] + x) * pad.padded[1] + y) * pad.padded[2] + z] =
                        vol[((c * ext[0] + sx) * ext[1] + sy) * ext[2] + sz];
                }
            }
        }
    return out;
}

std::vector<double> window_weights(const std::array<int64_t, 3>& patch, bool gaussian) {
    const int64_t n = patch[0] * patch[1] * patch[2];
    std::vector<double> w(static_cast<size_t>(n), 1.0);
    if (!gaussian) return w;
    std::array<std::vector<double>, 3> axis;
    for (int a = 0; a < 3; ++a) {
        axis[static_cast<size_t>(a)].resize(static_cast<size_t>(patch[a]));
        const double ctr = (static_cast<double>(patch[a]) - 1.0) / 2.0;
        const double sigma = std::max(1.0, static_cast<double>(patch[a]) / 8.0);
        for (int64_t i = 0; i < patch[a]; ++i) {
            const double d = (static_cast<double>(i) - ctr) / sigma;
            axis[static_cast<size_t>(a)][static_cast<size_t>(i)] = std::exp(-0.5 * d * d);
        }
    }
    int64_t i = 0;
    for (int64_t x = 0; x < patch[0]; ++x)
        for (int64_t y = 0; y < patch[1]; ++y)
            for (int64_t z = 0; z < patch[2]; ++z, ++i)
                w[static_cast<size_t>(i)] = axis[0][static_cast<size_t>(x)] *
                                            axis[1][static_cast<size_t>(y)] *
                                            axis[2][static_cast<size_t>(z)];
    return w;
}

}  // namespace

ProbabilityMap sliding_window(const PredictPatchFn& predict, const Tensor& volume,
                              const SlidingWindowOptions& opt) {
    if (volume.rank() != 4) throw std::invalid_argument("sliding_window: volume must be {C,X,Y,Z}");
    for (int64_t p : opt.patch)
        if (p < 1) throw std::invalid_argument("sliding_window: degenerate patch");

    Padding pad;
    const Tensor padded = pad_to_patch(volume, opt.patch, pad);
    const std::array<int64_t, 3> ext{padded.dim(1), padded.dim(2), padded.dim(3)};
    const std::array<std::vector<int64_t>, 3> origins{window_origins(ext[0], opt.patch[0], opt.overlap),
                                                      window_origins(ext[1], opt.patch[1], opt.overlap),
                                                      window_origins(ext[2], opt.patch[2], opt.overlap)};
    const std::vector<double> weights = window_weights(opt.patch, opt.gaussian_weighting);

    const int64_t in_ch = padded.dim(0);
    const int64_t vvox = ext[0] * ext[1] * ext[2];

    Tensor accum;       // {C, ext} allocated after the first prediction
    Tensor weight_sum({ext[0], ext[1], ext[2]});
    Tensor patch_in({in_ch, opt.patch[0], opt.patch[1], opt.patch[2]});
    int64_t out_classes = 0;

    for (int64_t ox : origins[0])
        for (int64_t oy : origins[1])
            for (int64_t oz : origins[2]) {
                for (int64_t c = 0; c < in_ch; ++c)
                    for (int64_t x = 0; x < opt.patch[0]; ++x)
                        for (int64_t y = 0; y < opt.patch[1]; ++y)
                            std::memcpy(patch_in.data() +
                                            ((c * opt.patch[0] + x) * opt.patch[1] + y) * opt.patch[2],
                                        padded.data() +
                                            ((c * ext[0] + ox + x) * ext[1] + oy + y) * ext[2] + oz,
                                        sizeof(real) * static_cast<size_t>(opt.patch[2]));
                const Tensor pred = predict(patch_in);
                if (pred.rank() != 4 || pred.dim(1) != opt.patch[0] || pred.dim(2) != opt.patch[1] ||
                    pred.dim(3) != opt.patch[2])
                    throw std::runtime_error("sliding_window: predictor returned wrong shape " +
                                             shape_to_string(pred.shape()));
                if (accum.numel() == 0) {
                    out_classes = pred.dim(0);
                    accum = Tensor({out_classes, ext[0], ext[1], ext[2]});
                }
                for (int64_t c = 0; c < out_classes; ++c)
                    for (int64_t x = 0; x < opt.patch[0]; ++x)
                        for (int64_t y = 0; y < opt.patch[1]; ++y) {
                            const real* src = pred.data() +
                                              ((c * opt.patch[0] + x) * opt.patch[1] + y) * opt.patch[2];
                            const double* wline =
                                weights.data() + (x * opt.patch[1] + y) * opt.patch[2];
                            real* dst = accum.data() +
                                        ((c * ext[0] + ox + x) * ext[1] + oy + y) * ext[2] + oz;
                            for (int64_t z = 0; z < opt.patch[2]; ++z) dst[z] += wline[z] * src[z];
                        }
                for (int64_t x = 0; x < opt.patch[0]; ++x)
                    for (int64_t y = 0; y < opt.patch[1]; ++y) {
                        const double* wline = weights.data() + (x * opt.patch[1] + y) * opt.patch[2];
                        real* dst = weight_sum.data() + ((ox + x) * ext[1] + oy + y) * ext[2] + oz;
                        for (int64_t z = 0; z < opt.patch[2]; ++z) dst[z] += wline[z];
                    }
            }

    for (int64_t c = 0; c < out_classes; ++c)
        for (int64_t i = 0; i < vvox; ++i) accum[c * vvox + i] /= weight_sum[i];

    // Crop back to the original extent.
    ProbabilityMap pm;
    const std::array<int64_t, 3> orig{volume.dim(1), volume.dim(2), volume.dim(3)};
    pm.prob = Tensor({out_classes, orig[0], orig[1], orig[2]});
    for (int64_t c = 0; c < out_classes; ++c)
        for (int64_t x = 0; x < orig[0]; ++x)
            for (int64_t y = 0; y < orig[1]; ++y)
                std::memcpy(pm.prob.data() + ((c * orig[0] + x) * orig[1] + y) * orig[2],
                            accum.data() + ((c * ext[0] + x + pad.before[0]) * ext[1] + y + pad.before[1]) *
                                               ext[2] +
                                pad.before[2],
                            sizeof(real) * static_cast<size_t>(orig[2]));
    return pm;
}

std::vector<std::array<bool, 3>> TTAPlan::transforms() const {
    std::vector<int> axes;
    for (int a = 0; a < 3; ++a)
        if (allowed[static_cast<size_t>(a)]) axes.push_back(a);
    std::vector<std::array<bool, 3>> out;
    const size_t n = size_t{1} << axes.size();
    for (size_t mask = 0; mask < n; ++mask) {
        std::array<bool, 3> t{false, false, false};
        for (size_t i = 0; i < axes.size(); ++i)
            if (mask & (size_t{1} << i)) t[static_cast<size_t>(axes[i])] = true;
        out.push_back(t);
    }
    return out;
}

TTAPlan TTAPlan::from_axes(const std::vector<std::string>& axes) {
    TTAPlan plan;
    plan.allowed = {false, false, false};
    for (const auto& a : axes) {
        if (a == "x")
            plan.allowed[0] = true;
        else if (a == "y")
            plan.allowed[1] = true;
        else if (a == "z")
            plan.allowed[2] = true;
        else
            throw std::invalid_argument("TTAPlan: unknown axis '" + a + "'");
    }
    return plan;
}

std::vector<std::string> TTAPlan::axis_names() const {
    std::vector<std::string> names;
    const char* n = "xyz";
    for (int a = 0; a < 3; ++a)
        if (allowed[static_cast<size_t>(a)]) names.emplace_back(1, n[a]);
    return names;
}

Tensor flip_channels(const Tensor& t, const std::array<bool, 3>& axes) {
    if (t.rank() != 4) throw std::invalid_argument("flip_channels: expected {C,X,Y,Z}");
    if (!axes[0] && !axes[1] && !axes[2]) return t;
    const int64_t C = t.dim(0), X = t.dim(1), Y = t.dim(2), Z = t.dim(3);
    Tensor out(t.shape());
    for (int64_t c = 0; c < C; ++c)
        for (int64_t x = 0; x < X; ++x) {
            const int64_t sx = axes[0] ? X - 1 - x : x;
            for (int64_t y = 0; y < Y; ++y) {
                const int64_t sy = axes[1] ? Y - 1 - y : y;
                for (int64_t z = 0; z < Z; ++z) {
                    const int64_t sz = axes[2] ? Z - 1 - z : z;
                    out[((c * X + x) * Y + y) * Z + z] = t[((c * X + sx) * Y + sy) * Z + sz];
                }
            }
        }
    return out;
}

ProbabilityMap tta_predict(const PredictVolumeFn& predict, const Tensor& volume, const TTAPlan& plan) {
    const auto transforms = plan.transforms();
    ProbabilityMap acc;
    for (const auto& t : transforms) {
        const Tensor transformed = flip_channels(volume, t);
        ProbabilityMap pred = predict(transformed);
        pred.prob = flip_channels(pred.prob, t);  // flips are involutions
        if (acc.prob.numel() == 0) {
            acc = std::move(pred);
        } else {
            if (!acc.prob.same_shape(pred.prob)) throw std::runtime_error("tta_predict: shape drift");
            for (int64_t i = 0; i < acc.prob.numel(); ++i) acc.prob[i] += pred.prob[i];
        }
    }
    const double inv = 1.0 / static_cast<double>(transforms.size());
    for (int64_t i = 0; i < acc.prob.numel(); ++i) acc.prob[i] *= inv;
    return acc;
}

ProbabilityMap ensemble(const std::vector<ProbabilityMap>& preds) {
    if (preds.empty()) throw std::invalid_argument("ensemble: need at least one prediction");
    const ProbabilityMap& first = preds.front();
    for (const auto& p : preds) {
        if (!p.prob.same_shape(first.prob))
            throw std::invalid_argument("ensemble: shape mismatch between predictions");
        if (p.case_id != first.case_id)
            throw std::invalid_argument("ensemble: case mismatch: " + p.case_id + " vs " + first.case_id);
    }
    ProbabilityMap out;
    out.spacing = first.spacing;
    out.case_id = first.case_id;
    out.prob = Tensor(first.prob.shape());
    const double inv = 1.0 / static_cast<double>(preds.size());
    for (const auto& p : preds)
        for (int64_t i = 0; i < out.prob.numel(); ++i) out.prob[i] += p.prob[i];
    for (int64_t i = 0; i < out.prob.numel(); ++i) out.prob[i] *= inv;
    return out;
}

LabelMap argmax_labels(const ProbabilityMap& prob) {
    const int64_t C = prob.prob.dim(0);
    const std::array<int64_t, 3> sh{prob.prob.dim(1), prob.prob.dim(2), prob.prob.dim(3)};
    const int64_t V = sh[0] * sh[1] * sh[2];
    LabelMap lm(sh, static_cast<int>(C), prob.spacing);
    for (int64_t i = 0; i < V; ++i) {
        int32_t best = 0;
        real best_val = prob.prob[i];
        for (int64_t c = 1; c < C; ++c) {
            const real v = prob.prob[c * V + i];
            if (v > best_val) {  // strict: ties stay at the lower index
                best_val = v;
                best = static_cast<int32_t>(c);
            }
        }
        lm.labels[static_cast<size_t>(i)] = best;
    }
    return lm;
}

ProbabilityMap predict_case(const std::vector<network::Checkpoint>& models, const Tensor& input,
                            const TTAPlan& plan, const SlidingWindowOptions& swo,
                            const std::string& case_id, const Spacing& spacing) {
    if (models.empty()) throw std::invalid_argument("predict_case: need at least one model");
    std::vector<ProbabilityMap> preds;
    for (const auto& ckpt : models) {
        network::ResUNet net(ckpt.spec);
        const auto patch_fn = make_patch_predictor(net, ckpt.params);
        PredictVolumeFn vol_fn = [&](const Tensor& v) { return sliding_window(patch_fn, v, swo); };
        ProbabilityMap pm = tta_predict(vol_fn, input, plan);
        pm.case_id = case_id;
        pm.spacing = spacing;
        preds.push_back(std::move(pm));
    }
    return ensemble(preds);
}

volume_io::DatasetManifest generate_pseudo_labels(const std::vector<network::Checkpoint>& models,
                                                  const volume_io::DatasetManifest& manifest,
                                                  const PseudoOptions& opt) {
    if (models.empty()) throw std::invalid_argument("generate_pseudo_labels: need at least one model");
    if (opt.out_dir.empty()) throw std::invalid_argument("generate_pseudo_labels: out_dir required");
    fs::create_directories(opt.out_dir);

    volume_io::DatasetManifest out;
    out.num_classes = models.front().spec.num_classes;
    out.base_dir = opt.out_dir;

    for (const auto* entry : manifest.test_entries()) {
        const auto cs = preprocess::load_preprocessed_case(manifest, *entry, opt.ct_lo_q, opt.ct_hi_q);
        const ProbabilityMap pm =
            predict_case(models, cs.input, opt.plan, opt.window, cs.case_id, cs.spacing);
        const LabelMap labels = argmax_labels(pm);

        const std::string label_rel = entry->case_id + "_pseudo.bin";
        volume_io::save_labelmap(labels, (fs::path(opt.out_dir) / label_rel).string());

        json prov;
        prov["case_id"] = entry->case_id;
        prov["models"] = opt.model_names;
        prov["flip_axes"] = opt.plan.axis_names();
        prov["patch"] = opt.window.patch;
        prov["overlap"] = opt.window.overlap;
        prov["gaussian_weighting"] = opt.window.gaussian_weighting;
        const auto now = std::chrono::system_clock::now();
        prov["timestamp_unix"] = std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
        std::ofstream pf((fs::path(opt.out_dir) / (entry->case_id + "_pseudo.provenance.json")).string(),
                         std::ios::trunc);
        pf << prov.dump(2) << "\n";

        volume_io::CaseEntry pe = *entry;
        // Keep modality paths usable from the new manifest location.
        pe.ct_path = manifest.resolve(entry->ct_path);
        pe.t1ce_path = manifest.resolve(entry->t1ce_path);
        pe.flair_path = manifest.resolve(entry->flair_path);
        pe.label_path = label_rel;
        out.entries.push_back(std::move(pe));
    }

    volume_io::save_manifest(out, (fs::path(opt.out_dir) / "pseudo_manifest.json").string());
    return out;
}

void save_probability_map(const ProbabilityMap& pm, const std::string& path) {
    pm.validate();
    json j;
    j["shape"] = pm.prob.shape();
    j["dtype"] = "float64";
    j["spacing"] = pm.spacing;
    j["order"] = "channels-outermost,xyz-fastest-first";
    j["case_id"] = pm.case_id;
    std::string jpath = path;
    if (jpath.size() > 4 && jpath.substr(jpath.size() - 4) == ".bin")
        jpath = jpath.substr(0, jpath.size() - 4) + ".json";
    else
        jpath += ".json";
    std::ofstream jf(jpath, std::ios::trunc);
    if (!jf) throw std::runtime_error("save_probability_map: cannot write " + jpath);
    jf << j.dump(2) << "\n";

    const int64_t C = pm.prob.dim(0);
    const std::array<int64_t, 3> sh{pm.prob.dim(1), pm.prob.dim(2), pm.prob.dim(3)};
    std::vector<double> disk(static_cast<size_t>(pm.prob.numel()));
    size_t i = 0;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t z = 0; z < sh[2]; ++z)
            for (int64_t y = 0; y < sh[1]; ++y)
                for (int64_t x = 0; x < sh[0]; ++x)
                    disk[i++] = pm.prob[((c * sh[0] + x) * sh[1] + y) * sh[2] + z];
    std::ofstream bf(path, std::ios::binary | std::ios::trunc);
    if (!bf) throw std::runtime_error("save_probability_map: cannot write " + path);
    bf.write(reinterpret_cast<const char*>(disk.data()),
             static_cast<std::streamsize>(disk.size() * sizeof(double)));
}

ProbabilityMap load_probability_map(const std::string& path) {
    std::string jpath = path;
    if (jpath.size() > 4 && jpath.substr(jpath.size() - 4) == ".bin")
        jpath = jpath.substr(0, jpath.size() - 4) + ".json";
    else
        jpath += ".json";
    std::ifstream jf(jpath);
    if (!jf) throw std::runtime_error("load_probability_map: missing sidecar " + jpath);
    json j;
    jf >> j;
    const auto shape = j.at("shape").get<std::vector<int64_t>>();
    if (shape.size() != 4) throw std::runtime_error("load_probability_map: sidecar shape must be rank 4");

    ProbabilityMap pm;
    pm.prob = Tensor(shape);
    if (j.contains("spacing")) {
        const auto sp = j.at("spacing").get<std::vector<double>>();
        std::copy(sp.begin(), sp.end(), pm.spacing.begin());
    }
    pm.case_id = j.value("case_id", std::string());

    std::ifstream bf(path, std::ios::binary);
    if (!bf) throw std::runtime_error("load_probability_map: missing " + path);
    std::vector<double> disk(static_cast<size_t>(pm.prob.numel()));
    bf.read(reinterpret_cast<char*>(disk.data()),
            static_cast<std::streamsize>(disk.size() * sizeof(double)));
    if (!bf) throw std::runtime_error("load_probability_map: truncated " + path);
    size_t i = 0;
    const int64_t C = shape[0];
    const std::array<int64_t, 3> sh{shape[1], shape[2], shape[3]};
    for (int64_t c = 0; c < C; ++c)
        for (int64_t z = 0; z < sh[2]; ++z)
            for (int64_t y = 0; y < sh[1]; ++y)
                for (int64_t x = 0; x < sh[0]; ++x)
                    pm.prob[((c * sh[0] + x) * sh[1] + y) * sh[2] + z] = disk[i++];
    return pm;
}

}  // namespace abseg::inference
