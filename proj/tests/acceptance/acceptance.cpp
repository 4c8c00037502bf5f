// Acceptance suite: runs the pinned end-to-end criteria and prints one
// PASS/FAIL line each. Usage: abseg_acceptance [N ...] (default: all 12).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "abseg/cli.hpp"
#include "abseg/config.hpp"
#include "abseg/inference.hpp"
#include "abseg/losses.hpp"
#include "abseg/metrics.hpp"
#include "abseg/network.hpp"
#include "abseg/preprocess.hpp"
#include "abseg/rng.hpp"
#include "abseg/synthdata.hpp"
#include "abseg/trainer.hpp"
#include "abseg/volume_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace abseg;

namespace {

struct Outcome {
    bool ok = false;
    std::string detail;
};

fs::path scratch_root() { return fs::temp_directory_path() / "abseg_acceptance"; }

fs::path fresh_dir(const std::string& tag) {
    const fs::path p = scratch_root() / tag;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("acceptance: cannot read " + p.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string fmt_sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2e", v);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. Shape contract
// ---------------------------------------------------------------------------

Outcome criterion_1() {
    network::NetworkSpec spec;  // paper-default plan
    spec.num_classes = 6;
    const auto plan = network::shape_plan(spec, {3, 128, 160, 112});
    const auto& bottleneck = plan.find("bottleneck").shape;
    const std::vector<int64_t> expected{320, 8, 10, 7};
    Outcome out;
    out.ok = bottleneck == expected;
    out.detail = "bottleneck " + shape_to_string(bottleneck);
    if (plan.find("head.l0").shape != std::vector<int64_t>{6, 128, 160, 112}) {
        out.ok = false;
        out.detail += ", full-res head mismatch";
    }
    return out;
}

// ---------------------------------------------------------------------------
// 2. Gradient fidelity: full finite-difference sweep over a tiny network
// ---------------------------------------------------------------------------

network::NetworkSpec fd_tiny_spec() {
    network::NetworkSpec s;
    s.levels = 2;
    s.blocks_per_level = {1, 1};
    s.filters_per_level = {3, 6};
    s.downsample_strides = {{2, 2, 1}};
    s.num_classes = 3;
    s.deep_supervision_levels = 1;
    return s;
}

Outcome criterion_2() {
    const auto spec = fd_tiny_spec();
    network::ResUNet model(spec);
    const auto params = model.init_params(11);
    if (params.total_scalars() > 5000) return {false, "tiny network exceeds 5k parameters"};

    Rng rin(13);
    Tensor input({1, 3, 2, 2, 3});
    for (int64_t i = 0; i < input.numel(); ++i) input[i] = rin.normal();
    Rng rlab(17);
    std::vector<int32_t> labels(12);
    for (auto& v : labels) v = static_cast<int32_t>(rlab.uniform_index(3));
    const Tensor y = losses::one_hot(labels, {2, 2, 3}, 1, 3);
    losses::LossConfig cfg;

    using LossFn = real (*)(const Tensor&, const Tensor&, const losses::LossConfig&, Tensor*);
    const std::vector<std::pair<std::string, LossFn>> loss_fns{
        {"dcce", &losses::dcce}, {"tversky", &losses::tversky_loss}, {"hybrid", &losses::hybrid_loss}};

    double worst = 0.0;
    std::string worst_at;
    const double h = 1e-3;

    for (const auto& [loss_name, fn] : loss_fns) {
        auto loss_of = [&](const network::ParameterSet& p) {
            const auto outs = model.forward(p, input, network::Mode::train);
            return fn(losses::softmax(outs.logits[0]), y, cfg, nullptr);
        };
        network::Workspace ws;
        const auto outs = model.forward(params, input, network::Mode::train, ws);
        const Tensor probs = losses::softmax(outs.logits[0]);
        Tensor grad_p;
        fn(probs, y, cfg, &grad_p);
        const auto grads = model.backward(params, ws, {losses::softmax_backward(probs, grad_p)});

        network::ParameterSet work = params;
        for (const auto& [name, value] : params.items()) {
            for (int64_t i = 0; i < value.numel(); ++i) {
                const double orig = value[i];
                work.at(name)[i] = orig + h;
                const double up = loss_of(work);
                work.at(name)[i] = orig - h;
                const double dn = loss_of(work);
                work.at(name)[i] = orig;
                const double fd = (up - dn) / (2.0 * h);
                const double g = grads.at(name)[i];
                const double mag = std::max(std::abs(fd), std::abs(g));
                const double rel = mag < 1e-7 ? 0.0 : std::abs(fd - g) / mag;
                if (rel > worst) {
                    worst = rel;
                    worst_at = loss_name + ":" + name;
                }
            }
        }
    }

    Outcome out;
    out.ok = worst < 1e-4;
    out.detail = std::to_string(params.total_scalars()) + " params, max rel err " + fmt_sci(worst) +
                 (worst_at.empty() ? "" : " at " + worst_at);
    return out;
}

// ---------------------------------------------------------------------------
// 3. Loss oracles
// ---------------------------------------------------------------------------

Outcome criterion_3() {
    losses::LossConfig cfg;
    cfg.epsilon = 1e-12;

    auto probs2 = [](std::vector<std::array<double, 2>> rows) {
        const int64_t n = static_cast<int64_t>(rows.size());
        Tensor p({1, 2, n});
        for (int64_t i = 0; i < n; ++i) {
            p[i] = rows[static_cast<size_t>(i)][0];
            p[n + i] = rows[static_cast<size_t>(i)][1];
        }
        return p;
    };
    auto onehot2 = [](std::vector<int32_t> labels) {
        return losses::one_hot(labels, {static_cast<int64_t>(labels.size())}, 1, 2);
    };

    double worst = 0.0;
    auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };

    track(losses::tversky_loss(probs2({{0.8, 0.2}}), onehot2({0}), cfg), 0.2);
    track(losses::tversky_loss(probs2({{0.8, 0.2}, {0.4, 0.6}}), onehot2({0, 1}), cfg), 0.3);
    track(losses::soft_dice(probs2({{0.8, 0.2}, {0.4, 0.6}}), onehot2({0, 1}), cfg), 0.35);
    track(losses::cross_entropy(probs2({{0.5, 0.5}}), onehot2({0}), cfg), 0.5 * std::log(2.0));

    Outcome out;
    out.ok = worst < 1e-10;
    out.detail = "max deviation " + fmt_sci(worst);
    return out;
}

// ---------------------------------------------------------------------------
// 4. Schedule exactness
// ---------------------------------------------------------------------------

Outcome criterion_4() {
    const double mid = trainer::poly_lr(500, 1000, 1e-4, 0.9);
    const double want = 1e-4 * std::pow(0.5, 0.9);
    const double rel = std::abs(mid - want) / want;
    Outcome out;
    out.ok = rel < 1e-12 && trainer::poly_lr(0, 1000, 1e-4, 0.9) == 1e-4 &&
             trainer::poly_lr(1000, 1000, 1e-4, 0.9) == 0.0;
    out.detail = "poly_lr(500)=" + fmt_sci(mid) + ", rel err " + fmt_sci(rel) + ", endpoints exact";
    return out;
}

// ---------------------------------------------------------------------------
// 5. Deep-supervision weights
// ---------------------------------------------------------------------------

Outcome criterion_5() {
    network::NetworkSpec spec;  // default 5-level plan, 4 heads
    spec.num_classes = 2;
    const auto w = spec.resolved_ds_weights();
    double sum = 0.0;
    for (double x : w) sum += x;
    const double head = losses::deep_supervised({1, 0, 0, 0}, w);
    Outcome out;
    out.ok = head == 8.0 / 15.0 && std::abs(sum - 1.0) < 1e-12 && w.size() == 4;
    out.detail = std::string("w(level1)=8/15 exact: ") + (head == 8.0 / 15.0 ? "yes" : "no") +
                 ", sum dev " + fmt_sci(std::abs(sum - 1.0));
    return out;
}

// ---------------------------------------------------------------------------
// 6. Ensemble properties over 100 random simplex maps
// ---------------------------------------------------------------------------

Outcome criterion_6() {
    Rng rng(29);
    auto random_map = [&](std::string id) {
        inference::ProbabilityMap pm;
        pm.case_id = std::move(id);
        pm.prob = Tensor({4, 6, 5, 4});
        const int64_t V = 6 * 5 * 4;
        for (int64_t i = 0; i < V; ++i) {
            double sum = 0.0;
            for (int64_t c = 0; c < 4; ++c) {
                pm.prob[c * V + i] = 0.01 + rng.uniform();
                sum += pm.prob[c * V + i];
            }
            for (int64_t c = 0; c < 4; ++c) pm.prob[c * V + i] /= sum;
        }
        return pm;
    };

    double worst_idem = 0.0, worst_perm = 0.0, worst_simplex = 0.0;
    bool argmax_stable = true;
    for (int trial = 0; trial < 100; ++trial) {
        auto a = random_map("case");
        auto b = random_map("case");
        auto c = random_map("case");

        const auto same = inference::ensemble({a, a, a});
        for (int64_t i = 0; i < same.prob.numel(); ++i)
            worst_idem = std::max(worst_idem, std::abs(same.prob[i] - a.prob[i]));

        const auto abc = inference::ensemble({a, b, c});
        const auto cab = inference::ensemble({c, a, b});
        for (int64_t i = 0; i < abc.prob.numel(); ++i)
            worst_perm = std::max(worst_perm, std::abs(abc.prob[i] - cab.prob[i]));

        const int64_t V = abc.prob.numel() / 4;
        for (int64_t i = 0; i < V; ++i) {
            double sum = 0.0;
            for (int64_t ch = 0; ch < 4; ++ch) sum += abc.prob[ch * V + i];
            worst_simplex = std::max(worst_simplex, std::abs(sum - 1.0));
        }

        const auto base = inference::argmax_labels(b);
        const auto dup = inference::argmax_labels(inference::ensemble({b, b, b, b, b}));
        argmax_stable &= base.labels == dup.labels;
    }

    Outcome out;
    out.ok = worst_idem < 1e-12 && worst_perm < 1e-12 && worst_simplex < 1e-9 && argmax_stable;
    out.detail = "idempotence dev " + fmt_sci(worst_idem) + ", permutation dev " + fmt_sci(worst_perm) +
                 ", simplex dev " + fmt_sci(worst_simplex) +
                 (argmax_stable ? ", argmax stable" : ", ARGMAX UNSTABLE");
    return out;
}

// ---------------------------------------------------------------------------
// 7. Metric oracles
// ---------------------------------------------------------------------------

LabelMap random_blob_mask(std::array<int64_t, 3> grid, uint64_t seed, const Spacing& spacing) {
    Rng rng(seed);
    LabelMap lm(grid, 2, spacing);
    const int shapes = 1 + static_cast<int>(rng.uniform_index(3));
    for (int s = 0; s < shapes; ++s) {
        const bool sphere = rng.bernoulli(0.5);
        std::array<double, 3> ctr{};
        for (int a = 0; a < 3; ++a)
            ctr[static_cast<size_t>(a)] =
                2.0 + rng.uniform() * (static_cast<double>(grid[static_cast<size_t>(a)]) - 4.0);
        const double r = 1.5 + rng.uniform() * (static_cast<double>(grid[0]) * 0.2);
        for (int64_t x = 0; x < grid[0]; ++x)
            for (int64_t y = 0; y < grid[1]; ++y)
                for (int64_t z = 0; z < grid[2]; ++z) {
                    const double dx = static_cast<double>(x) - ctr[0];
                    const double dy = static_cast<double>(y) - ctr[1];
                    const double dz = static_cast<double>(z) - ctr[2];
                    const bool in = sphere ? (dx * dx + dy * dy + dz * dz <= r * r)
                                           : (std::abs(dx) <= r && std::abs(dy) <= r * 0.7 &&
                                              std::abs(dz) <= r * 0.5);
                    if (in) lm.at(x, y, z) = 1;
                }
    }
    return lm;
}

std::vector<double> brute_face_distances_sq(const std::vector<metrics::SurfaceFace>& queries,
                                            const std::vector<metrics::SurfaceFace>& targets) {
    std::vector<double> out(queries.size(), std::numeric_limits<double>::infinity());
    for (size_t i = 0; i < queries.size(); ++i)
        for (const auto& t : targets) {
            const double dx = queries[i].center_mm[0] - t.center_mm[0];
            const double dy = queries[i].center_mm[1] - t.center_mm[1];
            const double dz = queries[i].center_mm[2] - t.center_mm[2];
            out[i] = std::min(out[i], dx * dx + dy * dy + dz * dz);
        }
    return out;
}

Outcome criterion_7() {
    // Hand-counted cube overlap: 4x4x4 cubes sharing a 2x4x4 slab.
    LabelMap pred({8, 8, 8}, 2), gt({8, 8, 8}, 2);
    for (int64_t x = 0; x < 4; ++x)
        for (int64_t y = 0; y < 4; ++y)
            for (int64_t z = 0; z < 4; ++z) {
                pred.at(x, y, z) = 1;
                gt.at(x + 2, y, z) = 1;
            }
    if (metrics::dice_score(pred, gt, 1) != 0.5) return {false, "cube-overlap dice is not exactly 0.5"};

    // Fast surface distances vs brute-force face scan on 20 random pairs.
    const Spacing spacing{1.2, 1.2, 1.2};
    double worst_dist = 0.0, worst_score = 0.0;
    int compared = 0;
    for (uint64_t trial = 0; trial < 20; ++trial) {
        const std::array<int64_t, 3> grid{24 + static_cast<int64_t>(trial % 3) * 4,
                                          28 + static_cast<int64_t>(trial % 2) * 4,
                                          24 + static_cast<int64_t>(trial % 4) * 2};
        const auto a = random_blob_mask(grid, 1000 + trial, spacing);
        const auto b = random_blob_mask(grid, 2000 + trial, spacing);
        const auto fa = metrics::extract_surface(a, 1, spacing);
        const auto fb = metrics::extract_surface(b, 1, spacing);
        if (fa.empty() || fb.empty()) continue;
        ++compared;

        const auto fast_ab = metrics::face_distances_sq(fa, fb, spacing, grid);
        const auto brute_ab = brute_face_distances_sq(fa, fb);
        for (size_t i = 0; i < fast_ab.size(); ++i)
            worst_dist = std::max(worst_dist, std::abs(std::sqrt(fast_ab[i]) - std::sqrt(brute_ab[i])));

        // Score agreement at the default tolerance via both routes.
        const double tau = 1.2;
        const double fast_score = metrics::surface_dice(a, b, 1, tau, spacing);
        const auto brute_ba = brute_face_distances_sq(fb, fa);
        double close = 0.0, total = 0.0;
        for (size_t i = 0; i < fa.size(); ++i) {
            total += fa[i].area_mm2;
            if (brute_ab[i] <= tau * tau) close += fa[i].area_mm2;
        }
        for (size_t i = 0; i < fb.size(); ++i) {
            total += fb[i].area_mm2;
            if (brute_ba[i] <= tau * tau) close += fb[i].area_mm2;
        }
        worst_score = std::max(worst_score, std::abs(fast_score - close / total));
    }

    Outcome out;
    out.ok = worst_dist < 1e-9 && worst_score < 1e-9 && compared >= 18;
    out.detail = "dice 0.5 exact; over " + std::to_string(compared) + " mask pairs: distance dev " +
                 fmt_sci(worst_dist) + ", score dev " + fmt_sci(worst_score);
    return out;
}

// ---------------------------------------------------------------------------
// 8. TTA bookkeeping
// ---------------------------------------------------------------------------

Outcome criterion_8() {
    inference::TTAPlan all;
    const auto t_all = all.transforms();
    const auto yz = inference::TTAPlan::from_axes({"y", "z"});
    const auto t_yz = yz.transforms();
    if (t_all.size() != 8 || t_yz.size() != 4)
        return {false,
                "transform counts " + std::to_string(t_all.size()) + "/" + std::to_string(t_yz.size())};
    for (const auto& tr : t_yz)
        if (tr[0]) return {false, "x flip leaked into the x-excluded plan"};

    // Singleton-plan TTA must equal plain sliding-window output bit-for-bit,
    // with a real network as the predictor.
    network::NetworkSpec spec = fd_tiny_spec();
    spec.num_classes = 4;
    network::ResUNet model(spec);
    const auto params = model.init_params(3);
    Rng rng(7);
    Tensor vol({3, 8, 8, 6});
    for (int64_t i = 0; i < vol.numel(); ++i) vol[i] = rng.normal();

    const auto patch_fn = inference::make_patch_predictor(model, params);
    inference::SlidingWindowOptions swo;
    swo.patch = {4, 4, 3};
    swo.overlap = 0.5;
    const inference::PredictVolumeFn vol_fn = [&](const Tensor& v) {
        return inference::sliding_window(patch_fn, v, swo);
    };
    inference::TTAPlan identity;
    identity.allowed = {false, false, false};
    if (identity.transforms().size() != 1) return {false, "singleton plan is not a singleton"};
    const auto plain = vol_fn(vol);
    const auto tta = inference::tta_predict(vol_fn, vol, identity);
    for (int64_t i = 0; i < plain.prob.numel(); ++i)
        if (tta.prob[i] != plain.prob[i]) return {false, "singleton TTA differs from plain prediction"};

    return {true, "8 transforms (xyz), 4 transforms (yz), singleton TTA bit-identical"};
}

// ---------------------------------------------------------------------------
// 9. Overfit smoke
// ---------------------------------------------------------------------------

synthdata::PhantomSpec smoke_phantom_spec(std::array<int64_t, 3> size, uint64_t seed) {
    synthdata::PhantomSpec spec;
    spec.size = size;
    spec.num_classes = 2;
    spec.seed = seed;
    spec.noise_sigma = 0.05;
    spec.rules = {{0.05, 0.9, 0.1, 0.0}, {1.0, 0.2, 0.6, 0.4}};
    synthdata::Shape s;
    s.kind = synthdata::Shape::Kind::sphere;
    s.class_id = 1;
    s.center = {static_cast<double>(size[0]) * 0.5 - 0.5, static_cast<double>(size[1]) * 0.5 - 0.5,
                static_cast<double>(size[2]) * 0.5 - 0.5};
    s.radius = {static_cast<double>(size[0]) * 0.27, 0, 0};
    spec.shapes = {s};
    return spec;
}

Outcome criterion_9() {
    auto phantom = synthdata::make_phantom(smoke_phantom_spec({24, 24, 24}, 5));

    network::NetworkSpec spec;
    spec.levels = 2;
    spec.blocks_per_level = {1, 1};
    spec.filters_per_level = {8, 16};
    spec.downsample_strides = {{2, 2, 2}};
    spec.num_classes = 2;
    spec.deep_supervision_levels = 1;
    network::ResUNet model(spec);
    auto params = model.init_params(1);

    // One fixed batch of the whole phantom, repeated every step.
    trainer::CaseData cd;
    cd.case_id = "smoke";
    cd.input = preprocess::preprocess_case(phantom.volume, 0.005, 0.995);
    cd.labels = phantom.labels;
    Rng rng(2);
    const auto patch = preprocess::sample_patch(cd.input, cd.labels, {24, 24, 24}, rng, 1.0);
    const auto batch = preprocess::collate({patch});

    losses::LossConfig loss_cfg;
    auto opt = trainer::make_optimizer_state(params);
    const double lr = 0.02, momentum = 0.95, wd = 1e-5;

    int steps = 0;
    for (; steps < 200; ++steps) {
        const auto bl = trainer::batch_loss_and_grads(model, params, batch, loss_cfg);
        if (!std::isfinite(bl.total)) return {false, "non-finite loss at step " + std::to_string(steps)};
        trainer::sgd_step(params, bl.grads, opt, lr, momentum, wd);
    }

    const auto outs = model.forward(params, batch.inputs, network::Mode::eval);
    const auto hard = losses::argmax_classes(losses::softmax(outs.logits[0]));
    const double dice = trainer::foreground_dice(hard, batch.targets);

    Outcome out;
    out.ok = dice >= 0.95;
    out.detail = "foreground dice " + std::to_string(dice) + " after " + std::to_string(steps) + " steps";
    return out;
}

// ---------------------------------------------------------------------------
// 10. End-to-end pipeline through the CLI
// ---------------------------------------------------------------------------

config::RunConfig small_run_config(const std::string& manifest, const std::string& out_dir) {
    config::RunConfig cfg;
    cfg.task = "task1";
    cfg.network.levels = 2;
    cfg.network.blocks_per_level = {1, 1};
    cfg.network.filters_per_level = {6, 12};
    cfg.network.downsample_strides = {{2, 2, 2}};
    cfg.network.deep_supervision_levels = 1;
    cfg.patch = {16, 16, 16};
    cfg.overlap = 0.25;
    cfg.training.lr0 = 0.01;
    cfg.training.momentum = 0.9;
    cfg.training.epochs = 1;
    cfg.training.steps_per_epoch = 8;
    cfg.training.batch_size = 2;
    cfg.training.seed = 3;
    cfg.augmentation.p_rotate_scale = 0.05;
    cfg.manifest_path = manifest;
    cfg.output_dir = out_dir;
    return cfg;
}

Outcome criterion_10() {
    const fs::path root = fresh_dir("c10");
    const std::string data_dir = (root / "data").string();

    // synth: 4 labeled + 2 unlabeled test cases
    if (cli::run({"synth", "--out", data_dir, "--cases", "4", "--test-cases", "2", "--size", "24",
                  "--seed", "11", "--noise", "0.05"}) != 0)
        return {false, "synth failed"};

    const std::string run_dir = (root / "run").string();
    auto cfg = small_run_config(data_dir + "/manifest.json", run_dir);
    const std::string cfg_path = (root / "config.json").string();
    config::save_run_config(cfg, cfg_path);

    // 2-fold cross-validation, short schedule
    if (cli::run({"crossval", "--config", cfg_path, "--k", "2"}) != 0) return {false, "crossval failed"};
    const std::string m0 = run_dir + "/crossval/fold0/fold0_final.ckpt";
    const std::string m1 = run_dir + "/crossval/fold1/fold1_final.ckpt";
    if (!fs::exists(m0) || !fs::exists(m1)) return {false, "fold checkpoints missing"};

    // predict the unlabeled split with the 2-model ensemble
    if (cli::run({"predict", "--config", cfg_path, "--models", m0, "--models", m1, "--cases", "test",
                  "--save-probs"}) != 0)
        return {false, "predict failed"};
    for (const char* id : {"case_004", "case_005"})
        if (!fs::exists(run_dir + "/predictions/" + std::string(id) + "_pred.bin"))
            return {false, "prediction missing for " + std::string(id)};

    // pseudo-train 20 steps on the combined supervised + pseudo objective
    const std::string ps_dir = (root / "pseudo_run").string();
    auto ps_cfg = cfg;
    ps_cfg.training.steps_per_epoch = 20;
    ps_cfg.output_dir = ps_dir;
    const std::string ps_cfg_path = (root / "pseudo_config.json").string();
    config::save_run_config(ps_cfg, ps_cfg_path);
    if (cli::run({"pseudo-train", "--config", ps_cfg_path, "--models", m0, "--models", m1}) != 0)
        return {false, "pseudo-train failed"};

    // Composition check on the recorded loss curve: total = supervised + pseudo.
    std::ifstream curve(ps_dir + "/loss_curve.jsonl");
    if (!curve) return {false, "pseudo loss curve missing"};
    std::string line;
    int lines = 0;
    double worst = 0.0;
    while (std::getline(curve, line)) {
        const json j = json::parse(line);
        ++lines;
        const double total = j.at("loss").get<double>();
        const double sup = j.at("components").at("supervised_total").get<double>();
        const double ps = j.at("components").at("pseudo_total").get<double>();
        worst = std::max(worst, std::abs(total - (sup + ps)));
    }
    if (lines != 20) return {false, "expected 20 pseudo-train steps, saw " + std::to_string(lines)};
    if (worst > 1e-9) return {false, "final-loss composition deviates by " + fmt_sci(worst)};

    // Independent recomputation of the final loss as two hybrid terms.
    {
        const auto manifest = volume_io::load_manifest(data_dir + "/manifest.json");
        const auto pseudo_manifest = volume_io::load_manifest(ps_dir + "/pseudo/pseudo_manifest.json");
        const auto ckpt = network::load_checkpoint(ps_dir + "/checkpoints/pseudo_final.ckpt");
        network::ResUNet model(ckpt.spec);

        auto batch_of = [&](const volume_io::DatasetManifest& m, const volume_io::CaseEntry& e,
                            uint64_t seed) {
            const auto cs = trainer::load_case(m, e);
            Rng rng(seed);
            auto p = preprocess::sample_patch(cs.input, cs.labels, {16, 16, 16}, rng, 1.0);
            return preprocess::collate({p});
        };
        const auto sup_batch = batch_of(manifest, *manifest.train_entries()[0], 5);
        const auto ps_batch = batch_of(pseudo_manifest, pseudo_manifest.entries[0], 6);

        auto probs_of = [&](const preprocess::PatchBatch& b) {
            return losses::softmax(model.forward(ckpt.params, b.inputs, network::Mode::eval).logits[0]);
        };
        losses::LossConfig lc;
        const Tensor p_s = probs_of(sup_batch);
        const Tensor y_s = losses::one_hot(sup_batch.targets, {16, 16, 16}, 1, ckpt.spec.num_classes);
        const Tensor p_t = probs_of(ps_batch);
        const Tensor y_t = losses::one_hot(ps_batch.targets, {16, 16, 16}, 1, ckpt.spec.num_classes);
        const double combined = losses::final_loss(p_s, y_s, p_t, y_t, lc);
        const double split = losses::hybrid_loss(p_s, y_s, lc) + losses::hybrid_loss(p_t, y_t, lc);
        if (std::abs(combined - split) > 1e-9)
            return {false, "final_loss vs split hybrids deviates by " + fmt_sci(combined - split)};
    }

    // evaluate the ensemble predictions against stored ground truth
    if (cli::run({"evaluate", "--pred-dir", run_dir + "/predictions", "--gt-dir", data_dir, "--tau",
                  "1.2", "--out", run_dir}) != 0)
        return {false, "evaluate failed"};
    const json report = json::parse(file_bytes(run_dir + "/report.json"));
    const auto rows = report.at("rows");
    if (rows.size() != 2 * 3) return {false, "report row count " + std::to_string(rows.size())};
    for (const auto& r : rows) {
        const double d = r.at("dsc").get<double>();
        const double s = r.at("sdsc").get<double>();
        if (!(d >= 0.0 && d <= 1.0 && s >= 0.0 && s <= 1.0))
            return {false, "score outside [0,1] in report"};
    }

    return {true,
            "synth -> crossval(k=2) -> 2-model ensemble predict -> pseudo-train(20) -> report; "
            "final-loss composition dev " + fmt_sci(worst)};
}

// ---------------------------------------------------------------------------
// 11. Flip-probe direction check
// ---------------------------------------------------------------------------

Outcome criterion_11() {
    // Mirrored-pair phantoms: classes 1 and 2 are identical in appearance and
    // differ only by side of the x midplane.
    const std::array<int64_t, 3> size{32, 32, 32};
    trainer::TrainDataset data;
    for (uint64_t i = 0; i < 3; ++i) {
        auto spec = synthdata::mirrored_pair_spec(size, 0);
        spec.seed = 100 + i;
        spec.noise_sigma = 0.05;
        auto ph = synthdata::make_phantom(spec);
        trainer::CaseData cd;
        cd.case_id = "pair" + std::to_string(i);
        cd.input = preprocess::preprocess_case(ph.volume, 0.005, 0.995);
        cd.labels = std::move(ph.labels);
        data.cases.push_back(std::move(cd));
    }

    trainer::TrainOptions opts;
    opts.spec.levels = 3;
    opts.spec.blocks_per_level = {1, 1, 1};
    opts.spec.filters_per_level = {8, 16, 32};
    opts.spec.downsample_strides = {{2, 2, 2}, {2, 2, 2}};
    opts.spec.num_classes = 3;
    opts.spec.deep_supervision_levels = 1;
    opts.config.lr0 = 0.02;
    opts.config.momentum = 0.95;
    opts.config.epochs = 1;
    opts.config.steps_per_epoch = 250;
    opts.config.batch_size = 2;
    opts.config.seed = 7;
    opts.config.fg_bias = 0.8;
    opts.patch = {32, 32, 32};  // whole volume, so absolute side is learnable
    opts.augmentation.p_rotate_scale = 0.0;
    opts.augmentation.mirror_prob = 0.0;  // the probe controls flips at test time
    opts.augmentation.p_gamma = 0.0;
    opts.augmentation.p_brightness = 0.0;

    const auto result = trainer::train(opts, data);

    network::Checkpoint ckpt;
    ckpt.spec = opts.spec;
    ckpt.params = result.params;
    inference::SlidingWindowOptions swo;
    swo.patch = {32, 32, 32};

    auto mean_pair_dice = [&](const inference::TTAPlan& plan) {
        double acc = 0.0;
        int n = 0;
        for (const auto& cs : data.cases) {
            const auto pm =
                inference::predict_case({ckpt}, cs.input, plan, swo, cs.case_id, cs.labels.spacing);
            const LabelMap pred = inference::argmax_labels(pm);
            for (int c : {1, 2}) {
                acc += metrics::dice_score(pred, cs.labels, c);
                ++n;
            }
        }
        return acc / n;
    };

    const double dice_yz = mean_pair_dice(inference::TTAPlan::from_axes({"y", "z"}));
    const double dice_xyz = mean_pair_dice(inference::TTAPlan::from_axes({"x", "y", "z"}));

    Outcome out;
    out.ok = dice_xyz < dice_yz && dice_yz > 0.5;
    out.detail = "mean pair dice: yz-TTA " + std::to_string(dice_yz) + " vs x-flip TTA " +
                 std::to_string(dice_xyz);
    return out;
}

// ---------------------------------------------------------------------------
// 12. Determinism: rerun from the expanded config, byte-identical artifacts
// ---------------------------------------------------------------------------

Outcome criterion_12() {
    setenv("ABSEG_NUM_WORKERS", "1", 1);
    const fs::path root = fresh_dir("c12");
    const std::string data_dir = (root / "data").string();
    if (cli::run({"synth", "--out", data_dir, "--cases", "2", "--size", "16", "--seed", "9"}) != 0)
        return {false, "synth failed"};

    auto run_pipeline = [&](const std::string& cfg_path, const std::string& out_dir) -> bool {
        if (cli::run({"train", "--config", cfg_path, "--out-dir", out_dir}) != 0) return false;
        if (cli::run({"predict", "--config", cfg_path, "--out-dir", out_dir, "--models",
                      out_dir + "/checkpoints/model_final.ckpt", "--cases", "train"}) != 0)
            return false;
        if (cli::run({"evaluate", "--pred-dir", out_dir + "/predictions", "--gt-dir", data_dir, "--tau",
                      "1.2", "--out", out_dir}) != 0)
            return false;
        return true;
    };

    auto cfg = small_run_config(data_dir + "/manifest.json", (root / "runA").string());
    cfg.training.steps_per_epoch = 5;
    const std::string cfg_path = (root / "config.json").string();
    config::save_run_config(cfg, cfg_path);
    if (!run_pipeline(cfg_path, (root / "runA").string())) return {false, "pipeline run A failed"};

    // Rerun from run A's expanded config into a fresh directory.
    if (!run_pipeline((root / "runA" / "expanded_config.json").string(), (root / "runB").string()))
        return {false, "pipeline run B failed"};

    std::vector<std::string> mismatches;
    auto compare = [&](const std::string& rel) {
        const auto a = file_bytes(root / "runA" / rel);
        const auto b = file_bytes(root / "runB" / rel);
        if (a != b) mismatches.push_back(rel);
    };
    compare("loss_curve.jsonl");
    compare("report.json");
    compare("report.txt");
    compare("predictions/case_000_pred.bin");
    compare("predictions/case_001_pred.bin");

    Outcome out;
    out.ok = mismatches.empty();
    out.detail = mismatches.empty()
                     ? "loss curve, reports and predictions byte-identical across reruns"
                     : "mismatch in: " + mismatches.front();
    return out;
}

using CriterionFn = Outcome (*)();

struct Criterion {
    int number;
    const char* name;
    CriterionFn fn;
};

const Criterion kCriteria[] = {
    {1, "shape contract (bottleneck 320x8x10x7)", &criterion_1},
    {2, "gradient fidelity (finite differences, tiny network)", &criterion_2},
    {3, "loss oracles (0.35 / 0.2 / 0.3 / 0.34657)", &criterion_3},
    {4, "poly schedule exactness", &criterion_4},
    {5, "deep-supervision weights (8/15, sum 1)", &criterion_5},
    {6, "ensemble properties (100 random simplex maps)", &criterion_6},
    {7, "metric oracles (dice 0.5, surface-dice vs brute force)", &criterion_7},
    {8, "TTA bookkeeping (8 / 4 transforms, singleton identity)", &criterion_8},
    {9, "overfit smoke (foreground dice >= 0.95 in 200 steps)", &criterion_9},
    {10, "end-to-end pipeline (synth -> crossval -> ensemble -> pseudo -> report)", &criterion_10},
    {11, "flip-probe direction (x-flip TTA degrades paired-class dice)", &criterion_11},
    {12, "determinism (byte-identical rerun from expanded config)", &criterion_12},
};

}  // namespace

int main(int argc, char** argv) {
    std::vector<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));

    int failures = 0, ran = 0;
    for (const auto& c : kCriteria) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.number) == wanted.end())
            continue;
        ++ran;
        const auto start = std::chrono::steady_clock::now();
        Outcome outcome;
        try {
            outcome = c.fn();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        char timing[32];
        std::snprintf(timing, sizeof(timing), "%.1fs", secs);
        std::cout << (outcome.ok ? "[PASS]" : "[FAIL]") << " criterion " << c.number << ": " << c.name
                  << " -- " << outcome.detail << " (" << timing << ")\n";
        std::cout.flush();
        if (!outcome.ok) ++failures;
    }
    if (ran == 0) {
        std::cerr << "no matching criteria\n";
        return 2;
    }
    std::cout << (failures == 0 ? "ALL PASSED" : std::to_string(failures) + " FAILED") << " (" << ran
              << " criteria)\n";
    return failures == 0 ? 0 : 1;
}
