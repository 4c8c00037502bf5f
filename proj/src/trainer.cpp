#include "abseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "abseg/inference.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace abseg::trainer {

void TrainingConfig::validate() const {
    if (!(lr0 > 0.0)) throw std::invalid_argument("TrainingConfig: lr0 must be > 0");
    if (momentum < 0.0 || momentum >= 1.0)
        throw std::invalid_argument("TrainingConfig: momentum must lie in [0,1)");
    if (weight_decay < 0.0) throw std::invalid_argument("TrainingConfig: weight_decay must be >= 0");
    if (epochs < 0 || batch_size < 1 || steps_per_epoch < 0)
        throw std::invalid_argument("TrainingConfig: nonpositive schedule field");
    if (!(poly_power > 0.0 && poly_power <= 2.0))
        throw std::invalid_argument("TrainingConfig: poly_power must lie in (0,2]");
    if (fg_bias < 0.0 || fg_bias > 1.0)
        throw std::invalid_argument("TrainingConfig: fg_bias must lie in [0,1]");
}

double poly_lr(int64_t e, int64_t total_epochs, double lr0, double power) {
    if (total_epochs < 1) throw std::invalid_argument("poly_lr: total_epochs must be >= 1");
    if (e < 0 || e > total_epochs)
        throw std::invalid_argument("poly_lr: epoch " + std::to_string(e) + " outside [0," +
                                    std::to_string(total_epochs) + "]");
    return lr0 * std::pow(1.0 - static_cast<double>(e) / static_cast<double>(total_epochs), power);
}

OptimizerState make_optimizer_state(const network::ParameterSet& params) {
    OptimizerState st;
    for (const auto& [name, t] : params.items()) st.velocity.add(name, Tensor(t.shape()));
    return st;
}

namespace {

bool decay_exempt(const std::string& name) {
    // Norm scales/offsets and all biases stay out of the L2 term.
    if (name.find(".norm") != std::string::npos) return true;
    return name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
}

}  // namespace

void sgd_step(network::ParameterSet& params, const network::GradientMap& grads, OptimizerState& state,
              double lr, double momentum, double weight_decay, bool nesterov) {
    if (params.size() != grads.size() || params.size() != state.velocity.size())
        throw std::invalid_argument("sgd_step: parameter/gradient/velocity name sets differ in size");

    // Validate everything before touching any weight so a bad step aborts
    // without partial updates.
    for (const auto& [name, w] : params.items()) {
        if (!grads.has(name)) throw std::invalid_argument("sgd_step: missing gradient for " + name);
        const Tensor& g = grads.at(name);
        if (!g.same_shape(w))
            throw std::invalid_argument("sgd_step: gradient shape mismatch for " + name);
        for (int64_t i = 0; i < g.numel(); ++i)
            if (!std::isfinite(g[i]))
                throw std::runtime_error("sgd_step: non-finite gradient in " + name + ", step aborted");
    }

    for (auto& [name, w] : params.items()) {
        const Tensor& g = grads.at(name);
        Tensor& v = state.velocity.at(name);
        const double wd = decay_exempt(name) ? 0.0 : weight_decay;
        for (int64_t i = 0; i < w.numel(); ++i) {
            const double g_eff = g[i] + wd * w[i];
            v[i] = momentum * v[i] + g_eff;
            const double update = nesterov ? g_eff + momentum * v[i] : v[i];
            w[i] -= lr * update;
        }
    }
    state.step += 1;
}

CaseData load_case(const volume_io::DatasetManifest& manifest, const volume_io::CaseEntry& entry,
                   double ct_lo_q, double ct_hi_q) {
    auto pc = preprocess::load_preprocessed_case(manifest, entry, ct_lo_q, ct_hi_q);
    if (!pc.labels)
        throw std::runtime_error("load_case: case " + entry.case_id + " has no labels for training");
    CaseData cd;
    cd.case_id = pc.case_id;
    cd.input = std::move(pc.input);
    cd.labels = std::move(*pc.labels);
    return cd;
}

double foreground_dice(const std::vector<int32_t>& pred, const std::vector<int32_t>& truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("foreground_dice: size mismatch");
    int64_t inter = 0, a = 0, b = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool pa = pred[i] != 0;
        const bool pb = truth[i] != 0;
        inter += (pa && pb) ? 1 : 0;
        a += pa ? 1 : 0;
        b += pb ? 1 : 0;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

namespace {

// Nearest-neighbor downsample of integer targets by per-axis factors.
std::vector<int32_t> downsample_targets(const std::vector<int32_t>& t, int64_t batch,
                                        const std::array<int64_t, 3>& full,
                                        const std::array<int64_t, 3>& coarse) {
    std::array<int64_t, 3> f{full[0] / coarse[0], full[1] / coarse[1], full[2] / coarse[2]};
    std::vector<int32_t> out(static_cast<size_t>(batch * coarse[0] * coarse[1] * coarse[2]));
    size_t o = 0;
    for (int64_t b = 0; b < batch; ++b) {
        const int64_t base = b * full[0] * full[1] * full[2];
        for (int64_t x = 0; x < coarse[0]; ++x)
            for (int64_t y = 0; y < coarse[1]; ++y)
                for (int64_t z = 0; z < coarse[2]; ++z)
                    out[o++] = t[static_cast<size_t>(base + ((x * f[0]) * full[1] + y * f[1]) * full[2] +
                                                     z * f[2])];
    }
    return out;
}

}  // namespace

BatchLoss batch_loss_and_grads(const network::ResUNet& net, const network::ParameterSet& params,
                               const preprocess::PatchBatch& batch, const losses::LossConfig& loss_cfg) {
    network::Workspace ws;
    const auto outs = net.forward(params, batch.inputs, network::Mode::train, ws);
    const auto ds_weights = net.spec().resolved_ds_weights();
    const int num_heads = static_cast<int>(outs.logits.size());

    BatchLoss result;
    std::vector<Tensor> dlogits(static_cast<size_t>(num_heads));
    for (int h = 0; h < num_heads; ++h) {
        const Tensor& logits = outs.logits[static_cast<size_t>(h)];
        const std::array<int64_t, 3> dims{logits.dim(2), logits.dim(3), logits.dim(4)};
        const auto targets = (h == 0) ? batch.targets
                                      : downsample_targets(batch.targets, batch.batch, batch.size, dims);
        const Tensor y = losses::one_hot(targets, {dims[0], dims[1], dims[2]}, batch.batch,
                                         net.spec().num_classes);
        const Tensor p = losses::softmax(logits);
        Tensor grad_p;
        const double level_loss = losses::hybrid_loss(p, y, loss_cfg, &grad_p);
        result.level_losses.push_back(level_loss);
        const double w = ds_weights[static_cast<size_t>(h)];
        for (int64_t i = 0; i < grad_p.numel(); ++i) grad_p[i] *= w;
        dlogits[static_cast<size_t>(h)] = losses::softmax_backward(p, grad_p);
    }
    result.total = losses::deep_supervised(result.level_losses, ds_weights);
    result.grads = net.backward(params, ws, dlogits);
    return result;
}

namespace {

preprocess::PatchBatch draw_batch(const TrainDataset& data, const TrainOptions& opts, uint64_t seed_base,
                                  int64_t step, uint64_t stream_offset) {
    std::vector<preprocess::Patch> patches;
    for (int64_t i = 0; i < opts.config.batch_size; ++i) {
        // Seed partition: one generator per sample index, so batches do not
        // depend on worker layout and resume reproduces them exactly.
        const uint64_t sample_index =
            static_cast<uint64_t>(step) * static_cast<uint64_t>(opts.config.batch_size) +
            static_cast<uint64_t>(i);
        Rng rng(seed_base + stream_offset + sample_index);
        const auto& cs = data.cases[rng.uniform_index(data.cases.size())];
        auto patch = preprocess::sample_patch(cs.input, cs.labels, opts.patch, rng, opts.config.fg_bias);
        patches.push_back(preprocess::augment(patch, opts.augmentation, rng));
    }
    return preprocess::collate(patches);
}

void append_loss_record(const std::string& path, const StepRecord& rec, bool pseudo_enabled) {
    if (path.empty()) return;
    json j;
    j["step"] = rec.step;
    j["epoch"] = rec.epoch;
    j["lr"] = rec.lr;
    j["loss"] = rec.loss;
    json comp;
    comp["supervised_total"] = rec.supervised_total;
    comp["supervised_hybrid"] = rec.supervised_hybrid;
    if (pseudo_enabled) {
        comp["pseudo_total"] = rec.pseudo_total;
        comp["pseudo_hybrid"] = rec.pseudo_hybrid;
    }
    comp["levels"] = rec.level_losses;
    j["components"] = comp;
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("train: cannot append to loss curve " + path);
    out << j.dump() << "\n";
}

}  // namespace

TrainResult train(const TrainOptions& opts, const TrainDataset& data, const TrainDataset* pseudo_data) {
    opts.config.validate();
    opts.loss.validate();
    opts.spec.validate();
    if (data.cases.empty()) throw std::invalid_argument("train: empty dataset");
    const bool use_pseudo = opts.config.pseudo_enabled && pseudo_data && !pseudo_data->cases.empty();

    network::ResUNet net(opts.spec);

    TrainResult result;
    int64_t start_step = 0;
    if (opts.resume) {
        result.params = opts.resume->params;
        result.opt = make_optimizer_state(result.params);
        if (opts.resume->velocities) result.opt.velocity = *opts.resume->velocities;
        start_step = opts.resume->step;
        result.opt.step = start_step;
    } else {
        result.params = net.init_params(opts.config.seed);
        result.opt = make_optimizer_state(result.params);
    }

    if (!opts.checkpoint_dir.empty()) fs::create_directories(opts.checkpoint_dir);

    auto write_checkpoint = [&](int64_t step, int64_t epoch, const std::string& suffix) {
        if (opts.checkpoint_dir.empty()) return std::string();
        network::Checkpoint ckpt;
        ckpt.spec = opts.spec;
        ckpt.params = result.params;
        ckpt.step = step;
        ckpt.epoch = epoch;
        ckpt.velocities = result.opt.velocity;
        const std::string path =
            (fs::path(opts.checkpoint_dir) / (opts.checkpoint_tag + suffix + ".ckpt")).string();
        network::save_checkpoint(ckpt, path);
        return path;
    };

    const int64_t total_steps = opts.config.epochs * opts.config.steps_per_epoch;
    if (start_step >= total_steps) {
        // Nothing to run; still emit the checkpoint so callers get an artifact.
        result.final_checkpoint_path = write_checkpoint(start_step, opts.config.epochs, "_final");
        return result;
    }

    for (int64_t step = start_step; step < total_steps; ++step) {
        const int64_t epoch = step / opts.config.steps_per_epoch;
        const double lr = poly_lr(epoch, opts.config.epochs, opts.config.lr0, opts.config.poly_power);

        const auto batch = draw_batch(data, opts, opts.config.seed, step, /*stream_offset=*/0);
        BatchLoss sup = batch_loss_and_grads(net, result.params, batch, opts.loss);

        StepRecord rec;
        rec.step = step + 1;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.supervised_total = sup.total;
        rec.supervised_hybrid = sup.level_losses.front();
        rec.level_losses = sup.level_losses;
        double total = sup.total;

        if (use_pseudo) {
            const auto pseudo_batch =
                draw_batch(*pseudo_data, opts, opts.config.seed, step, /*stream_offset=*/0x9E3779B97F4A7C15ULL);
            BatchLoss ps = batch_loss_and_grads(net, result.params, pseudo_batch, opts.loss);
            rec.pseudo_total = ps.total;
            rec.pseudo_hybrid = ps.level_losses.front();
            total += ps.total;
            for (auto& [name, g] : sup.grads.items()) {
                const Tensor& g2 = ps.grads.at(name);
                for (int64_t i = 0; i < g.numel(); ++i) g[i] += g2[i];
            }
        }
        rec.loss = total;

        if (!std::isfinite(total)) {
            write_checkpoint(step, epoch, "_abort");
            throw std::runtime_error("train: non-finite loss at step " + std::to_string(step + 1) +
                                     "; last good checkpoint retained");
        }

        sgd_step(result.params, sup.grads, result.opt, lr, opts.config.momentum,
                 opts.config.weight_decay, opts.config.nesterov);
        result.opt.epoch = epoch;

        append_loss_record(opts.loss_curve_path, rec, use_pseudo);
        result.history.push_back(std::move(rec));

        if (opts.config.checkpoint_interval_epochs > 0 && (step + 1) % opts.config.steps_per_epoch == 0) {
            const int64_t done_epochs = (step + 1) / opts.config.steps_per_epoch;
            if (done_epochs % opts.config.checkpoint_interval_epochs == 0 && step + 1 < total_steps)
                write_checkpoint(step + 1, done_epochs, "_epoch" + std::to_string(done_epochs));
        }
    }

    result.final_checkpoint_path = write_checkpoint(total_steps, opts.config.epochs, "_final");
    return result;
}

CrossValResult run_cross_validation(const TrainOptions& opts, const volume_io::DatasetManifest& manifest,
                                    int k, const std::string& out_dir, double overlap) {
    CrossValResult cv;
    cv.folds = volume_io::make_folds(manifest, k, opts.config.seed);
    fs::create_directories(out_dir);

    for (int fold = 0; fold < k; ++fold) {
        TrainDataset train_set;
        std::vector<std::string> val_ids = cv.folds.cases_in_fold(fold);
        for (const auto& id : cv.folds.cases_not_in_fold(fold))
            train_set.cases.push_back(load_case(manifest, manifest.find_case(id)));

        TrainOptions fold_opts = opts;
        fold_opts.checkpoint_dir = (fs::path(out_dir) / ("fold" + std::to_string(fold))).string();
        fold_opts.checkpoint_tag = "fold" + std::to_string(fold);
        fold_opts.loss_curve_path =
            (fs::path(fold_opts.checkpoint_dir) / "loss_curve.jsonl").string();
        fs::create_directories(fold_opts.checkpoint_dir);

        TrainResult tr = train(fold_opts, train_set);

        FoldResult fr;
        fr.fold = fold;
        fr.checkpoint_path = tr.final_checkpoint_path;
        fr.validation_cases = val_ids;

        network::Checkpoint ckpt;
        ckpt.spec = fold_opts.spec;
        ckpt.params = tr.params;
        inference::SlidingWindowOptions swo;
        swo.patch = fold_opts.patch;
        swo.overlap = overlap;
        inference::TTAPlan identity_only;
        identity_only.allowed = {false, false, false};

        double dice_sum = 0.0;
        for (const auto& id : val_ids) {
            const CaseData cs = load_case(manifest, manifest.find_case(id));
            const auto pm = inference::predict_case({ckpt}, cs.input, identity_only, swo, id,
                                                    cs.labels.spacing);
            const LabelMap pred = inference::argmax_labels(pm);
            dice_sum += foreground_dice(pred.labels, cs.labels.labels);
        }
        fr.mean_foreground_dice = val_ids.empty() ? 0.0 : dice_sum / static_cast<double>(val_ids.size());
        cv.per_fold.push_back(std::move(fr));
    }
    return cv;
}

}  // namespace abseg::trainer
