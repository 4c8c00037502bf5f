#include "abseg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>

#include "abseg/config.hpp"
#include "abseg/inference.hpp"
#include "abseg/losses.hpp"
#include "abseg/metrics.hpp"
#include "abseg/network.hpp"
#include "abseg/png_writer.hpp"
#include "abseg/preprocess.hpp"
#include "abseg/synthdata.hpp"
#include "abseg/trainer.hpp"
#include "abseg/volume_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace abseg::cli {

int num_workers() {
    const char* env = std::getenv("ABSEG_NUM_WORKERS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return n >= 1 ? n : 1;
}

namespace {

// Static partition over cases; deterministic outputs since every case writes
// its own files and shared results are merged in index order.
template <typename Fn>
void parallel_over(size_t count, Fn&& fn) {
    const int workers = std::min<int>(num_workers(), static_cast<int>(count));
    if (workers <= 1) {
        for (size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::future<void>> futures;
    for (int w = 0; w < workers; ++w)
        futures.push_back(std::async(std::launch::async, [&, w]() {
            for (size_t i = static_cast<size_t>(w); i < count; i += static_cast<size_t>(workers)) fn(i);
        }));
    for (auto& f : futures) f.get();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cli: cannot write " + path);
    out << text;
}

void write_log(const std::string& out_dir, const std::string& command, const json& payload) {
    fs::create_directories(fs::path(out_dir) / "logs");
    json j = payload;
    j["command"] = command;
    write_text((fs::path(out_dir) / "logs" / (command + ".json")).string(), j.dump(2) + "\n");
}

struct LoadedConfig {
    config::RunConfig cfg;
    volume_io::DatasetManifest manifest;
};

LoadedConfig load_expanded(const std::string& config_path, const std::string& out_override) {
    LoadedConfig lc;
    lc.cfg = config::load_run_config(config_path);
    if (!out_override.empty()) lc.cfg.output_dir = out_override;
    if (lc.cfg.manifest_path.empty()) throw std::runtime_error("config: manifest path is required");
    // Manifest paths resolve relative to the config file's directory.
    fs::path mp(lc.cfg.manifest_path);
    if (mp.is_relative()) {
        const fs::path base = fs::path(config_path).parent_path();
        if (fs::exists(base / mp)) lc.cfg.manifest_path = (base / mp).string();
    }
    lc.manifest = volume_io::load_manifest(lc.cfg.manifest_path);
    lc.cfg.expand(lc.manifest.num_classes);
    fs::create_directories(lc.cfg.output_dir);
    config::save_run_config(lc.cfg, (fs::path(lc.cfg.output_dir) / "expanded_config.json").string());
    return lc;
}

trainer::TrainOptions make_train_options(const config::RunConfig& cfg) {
    trainer::TrainOptions opts;
    opts.spec = cfg.network;
    opts.config = cfg.training;
    opts.loss = cfg.loss;
    opts.augmentation = cfg.augmentation;
    opts.patch = cfg.patch;
    return opts;
}

trainer::TrainDataset load_split(const volume_io::DatasetManifest& manifest,
                                 const std::vector<const volume_io::CaseEntry*>& entries,
                                 const config::RunConfig& cfg) {
    trainer::TrainDataset ds;
    ds.cases.resize(entries.size());
    parallel_over(entries.size(), [&](size_t i) {
        ds.cases[i] = trainer::load_case(manifest, *entries[i], cfg.ct_clip_lo_q, cfg.ct_clip_hi_q);
    });
    return ds;
}

std::vector<int> parse_class_list(const std::string& text) {
    std::vector<int> out;
    std::string token;
    std::istringstream ss(text);
    while (std::getline(ss, token, ',')) {
        if (!token.empty()) out.push_back(std::stoi(token));
    }
    return out;
}

int cmd_synth(const std::string& out_dir, int cases, int test_cases, std::vector<int64_t> size,
              int classes, uint64_t seed, double noise, bool mirrored_only) {
    synthdata::DatasetOptions opts;
    opts.n_cases = cases;
    opts.n_test_cases = test_cases;
    opts.seed = seed;
    opts.mirrored_only = mirrored_only;
    opts.out_dir = out_dir;
    if (size.size() == 1) size = {size[0], size[0], size[0]};
    if (size.size() != 3) throw std::runtime_error("synth: --size takes 1 or 3 values");
    opts.spec_template.size = {size[0], size[1], size[2]};
    opts.spec_template.num_classes = mirrored_only ? 3 : classes;
    opts.spec_template.noise_sigma = noise;
    const auto manifest = synthdata::make_dataset(opts);
    std::cout << "synth: wrote " << manifest.entries.size() << " cases ("
              << manifest.train_entries().size() << " train) to " << out_dir << "\n";
    return 0;
}

int cmd_shapes(const std::string& config_path) {
    const auto cfg = config::load_run_config(config_path);
    const auto plan = network::shape_plan(
        cfg.network, {3, cfg.patch[0], cfg.patch[1], cfg.patch[2]});
    std::cout << plan.to_string();
    return 0;
}

int cmd_preprocess(const std::string& config_path, const std::string& out_override) {
    LoadedConfig lc = load_expanded(config_path, out_override);
    const fs::path out_dir = fs::path(lc.cfg.output_dir) / "preprocessed";
    fs::create_directories(out_dir);

    volume_io::DatasetManifest out_manifest;
    out_manifest.num_classes = lc.manifest.num_classes;
    out_manifest.base_dir = out_dir.string();
    out_manifest.entries.resize(lc.manifest.entries.size());

    parallel_over(lc.manifest.entries.size(), [&](size_t i) {
        const auto& entry = lc.manifest.entries[i];
        MultiModalVolume v = volume_io::load_case_volume(lc.manifest, entry);
        Volume ct(preprocess::znormalize(
                      preprocess::clip_ct(v.ct, lc.cfg.ct_clip_lo_q, lc.cfg.ct_clip_hi_q)),
                  v.spacing);
        Volume t1(preprocess::znormalize(v.t1ce), v.spacing);
        Volume fl(preprocess::znormalize(v.flair), v.spacing);
        volume_io::save_volume(ct, (out_dir / (entry.case_id + "_ct.bin")).string());
        volume_io::save_volume(t1, (out_dir / (entry.case_id + "_t1ce.bin")).string());
        volume_io::save_volume(fl, (out_dir / (entry.case_id + "_flair.bin")).string());
        volume_io::CaseEntry e = entry;
        e.ct_path = entry.case_id + "_ct.bin";
        e.t1ce_path = entry.case_id + "_t1ce.bin";
        e.flair_path = entry.case_id + "_flair.bin";
        if (entry.has_label()) {
            const LabelMap lm = *volume_io::load_case_labels(lc.manifest, entry);
            volume_io::save_labelmap(lm, (out_dir / (entry.case_id + "_label.bin")).string());
            e.label_path = entry.case_id + "_label.bin";
        }
        out_manifest.entries[i] = std::move(e);
    });

    volume_io::save_manifest(out_manifest, (out_dir / "manifest.json").string());
    write_log(lc.cfg.output_dir, "preprocess",
              {{"cases", lc.manifest.entries.size()}, {"out_dir", out_dir.string()}});
    std::cout << "preprocess: wrote " << lc.manifest.entries.size() << " cases to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_override, int fold, int folds_k,
              const std::string& resume_path, const std::string& pseudo_manifest_path) {
    LoadedConfig lc = load_expanded(config_path, out_override);
    auto opts = make_train_options(lc.cfg);
    opts.loss_curve_path = (fs::path(lc.cfg.output_dir) / "loss_curve.jsonl").string();
    opts.checkpoint_dir = (fs::path(lc.cfg.output_dir) / "checkpoints").string();

    std::vector<const volume_io::CaseEntry*> train_entries = lc.manifest.train_entries();
    if (fold >= 0) {
        const auto folds = volume_io::make_folds(lc.manifest, folds_k, lc.cfg.training.seed);
        std::vector<const volume_io::CaseEntry*> kept;
        for (const auto* e : train_entries)
            if (folds.fold_of.at(e->case_id) != fold) kept.push_back(e);
        train_entries = std::move(kept);
        opts.checkpoint_tag = "fold" + std::to_string(fold);
    }
    const auto data = load_split(lc.manifest, train_entries, lc.cfg);

    trainer::TrainDataset pseudo;
    const trainer::TrainDataset* pseudo_ptr = nullptr;
    if (!pseudo_manifest_path.empty()) {
        const auto pm = volume_io::load_manifest(pseudo_manifest_path);
        std::vector<const volume_io::CaseEntry*> pe;
        for (const auto& e : pm.entries)
            if (e.has_label()) pe.push_back(&e);
        pseudo = load_split(pm, pe, lc.cfg);
        pseudo_ptr = &pseudo;
        opts.config.pseudo_enabled = true;
    }

    if (!resume_path.empty()) {
        opts.resume = network::load_checkpoint(resume_path);
    } else {
        std::error_code ec;
        fs::remove(opts.loss_curve_path, ec);  // fresh curve for a fresh run
    }

    const auto result = trainer::train(opts, data, pseudo_ptr);
    write_log(lc.cfg.output_dir, "train",
              {{"steps", result.history.size()},
               {"train_cases", data.cases.size()},
               {"pseudo_cases", pseudo.cases.size()},
               {"final_checkpoint", result.final_checkpoint_path}});
    std::cout << "train: " << result.history.size() << " steps, final checkpoint "
              << result.final_checkpoint_path << "\n";
    return 0;
}

int cmd_crossval(const std::string& config_path, const std::string& out_override, int k) {
    LoadedConfig lc = load_expanded(config_path, out_override);
    auto opts = make_train_options(lc.cfg);
    const std::string cv_dir = (fs::path(lc.cfg.output_dir) / "crossval").string();
    const auto cv = trainer::run_cross_validation(opts, lc.manifest, k, cv_dir, lc.cfg.overlap);

    json summary;
    summary["k"] = k;
    summary["folds"] = json::array();
    std::ostringstream table;
    table << "fold  val_cases  mean_fg_dice  checkpoint\n";
    for (const auto& fr : cv.per_fold) {
        json row;
        row["fold"] = fr.fold;
        row["validation_cases"] = fr.validation_cases;
        row["mean_foreground_dice"] = fr.mean_foreground_dice;
        row["checkpoint"] = fr.checkpoint_path;
        summary["folds"].push_back(row);
        table << fr.fold << "     " << fr.validation_cases.size() << "          " << std::fixed
              << std::setprecision(4) << fr.mean_foreground_dice << "        " << fr.checkpoint_path
              << "\n";
    }
    write_text((fs::path(lc.cfg.output_dir) / "crossval_summary.json").string(), summary.dump(2) + "\n");
    write_text((fs::path(lc.cfg.output_dir) / "crossval_summary.txt").string(), table.str());
    std::cout << table.str();
    return 0;
}

int cmd_predict(const std::string& config_path, const std::string& out_override,
                const std::vector<std::string>& model_paths, bool no_x_flip, double overlap_override,
                bool gaussian, const std::string& which_cases, bool save_probs) {
    LoadedConfig lc = load_expanded(config_path, out_override);
    if (model_paths.empty()) throw std::runtime_error("predict: at least one --models checkpoint required");

    std::vector<network::Checkpoint> models;
    for (const auto& p : model_paths) models.push_back(network::load_checkpoint(p));

    inference::TTAPlan plan = lc.cfg.tta;
    if (no_x_flip) plan.allowed[0] = false;
    inference::SlidingWindowOptions swo;
    swo.patch = lc.cfg.patch;
    swo.overlap = overlap_override >= 0 ? overlap_override : lc.cfg.overlap;
    swo.gaussian_weighting = gaussian || lc.cfg.gaussian_weighting;

    std::vector<const volume_io::CaseEntry*> entries;
    for (const auto& e : lc.manifest.entries) {
        if (which_cases == "all" || e.split == which_cases) entries.push_back(&e);
    }
    if (entries.empty()) throw std::runtime_error("predict: no cases selected for split " + which_cases);

    const fs::path pred_dir = fs::path(lc.cfg.output_dir) / "predictions";
    fs::create_directories(pred_dir);
    const size_t tta_count = plan.transforms().size();

    parallel_over(entries.size(), [&](size_t i) {
        const auto& entry = *entries[i];
        const auto cs =
            preprocess::load_preprocessed_case(lc.manifest, entry, lc.cfg.ct_clip_lo_q, lc.cfg.ct_clip_hi_q);
        const auto pm = inference::predict_case(models, cs.input, plan, swo, cs.case_id, cs.spacing);
        const LabelMap labels = inference::argmax_labels(pm);
        volume_io::save_labelmap(labels, (pred_dir / (entry.case_id + "_pred.bin")).string());
        if (save_probs)
            inference::save_probability_map(pm, (pred_dir / (entry.case_id + "_prob.bin")).string());
    });

    write_log(lc.cfg.output_dir, "predict",
              {{"cases", entries.size()},
               {"models", model_paths},
               {"tta_transforms", tta_count},
               {"overlap", swo.overlap},
               {"gaussian_weighting", swo.gaussian_weighting}});
    std::cout << "predict: " << entries.size() << " cases, " << models.size() << " model(s), TTA transform count "
              << tta_count << "\n";
    return 0;
}

int cmd_ensemble(const std::vector<std::string>& inputs, const std::string& out_dir) {
    if (inputs.size() < 1) throw std::runtime_error("ensemble: need at least one probability map");
    std::vector<inference::ProbabilityMap> maps;
    for (const auto& p : inputs) maps.push_back(inference::load_probability_map(p));
    const auto ens = inference::ensemble(maps);
    fs::create_directories(out_dir);
    const std::string stem = ens.case_id.empty() ? "ensemble" : ens.case_id;
    inference::save_probability_map(ens, (fs::path(out_dir) / (stem + "_ens_prob.bin")).string());
    volume_io::save_labelmap(inference::argmax_labels(ens),
                             (fs::path(out_dir) / (stem + "_ens_pred.bin")).string());
    std::cout << "ensemble: averaged " << maps.size() << " maps for case " << stem << "\n";
    return 0;
}

int cmd_pseudo_train(const std::string& config_path, const std::string& out_override,
                     const std::vector<std::string>& model_paths, bool no_x_flip) {
    LoadedConfig lc = load_expanded(config_path, out_override);
    if (model_paths.empty())
        throw std::runtime_error("pseudo-train: at least one --models checkpoint required");

    std::vector<network::Checkpoint> models;
    for (const auto& p : model_paths) models.push_back(network::load_checkpoint(p));

    inference::PseudoOptions popt;
    popt.plan = lc.cfg.tta;
    if (no_x_flip) popt.plan.allowed[0] = false;
    popt.window.patch = lc.cfg.patch;
    popt.window.overlap = lc.cfg.overlap;
    popt.window.gaussian_weighting = lc.cfg.gaussian_weighting;
    popt.out_dir = (fs::path(lc.cfg.output_dir) / "pseudo").string();
    popt.model_names = model_paths;
    popt.ct_lo_q = lc.cfg.ct_clip_lo_q;
    popt.ct_hi_q = lc.cfg.ct_clip_hi_q;

    const auto pseudo_manifest = inference::generate_pseudo_labels(models, lc.manifest, popt);
    if (pseudo_manifest.entries.empty())
        throw std::runtime_error("pseudo-train: manifest has no test cases to pseudo-label");

    auto opts = make_train_options(lc.cfg);
    opts.config.pseudo_enabled = true;
    opts.loss_curve_path = (fs::path(lc.cfg.output_dir) / "loss_curve.jsonl").string();
    opts.checkpoint_dir = (fs::path(lc.cfg.output_dir) / "checkpoints").string();
    opts.checkpoint_tag = "pseudo";
    std::error_code ec;
    fs::remove(opts.loss_curve_path, ec);

    const auto data = load_split(lc.manifest, lc.manifest.train_entries(), lc.cfg);
    std::vector<const volume_io::CaseEntry*> pe;
    for (const auto& e : pseudo_manifest.entries) pe.push_back(&e);
    const auto pseudo = load_split(pseudo_manifest, pe, lc.cfg);

    const auto result = trainer::train(opts, data, &pseudo);
    write_log(lc.cfg.output_dir, "pseudo-train",
              {{"steps", result.history.size()},
               {"pseudo_cases", pseudo.cases.size()},
               {"models", model_paths},
               {"final_checkpoint", result.final_checkpoint_path}});
    std::cout << "pseudo-train: " << result.history.size() << " steps with " << pseudo.cases.size()
              << " pseudo-labeled cases\n";
    return 0;
}

int cmd_evaluate(const std::string& pred_dir, const std::string& gt_dir, double tau,
                 const std::string& classes_text, const std::string& out_dir) {
    if (!fs::is_directory(pred_dir)) throw std::runtime_error("evaluate: missing --pred-dir " + pred_dir);
    if (!fs::is_directory(gt_dir)) throw std::runtime_error("evaluate: missing --gt-dir " + gt_dir);

    std::vector<std::string> pred_files;
    for (const auto& de : fs::directory_iterator(pred_dir)) {
        const std::string name = de.path().filename().string();
        if (name.size() > 9 && name.substr(name.size() - 9) == "_pred.bin") pred_files.push_back(name);
    }
    std::sort(pred_files.begin(), pred_files.end());
    if (pred_files.empty()) throw std::runtime_error("evaluate: no *_pred.bin files in " + pred_dir);

    metrics::EvaluationInputs inputs;
    for (const auto& name : pred_files) {
        const std::string case_id = name.substr(0, name.size() - 9);
        fs::path gt_path = fs::path(gt_dir) / (case_id + "_label.bin");
        if (!fs::exists(gt_path)) gt_path = fs::path(gt_dir) / (case_id + "_gt.bin");
        if (!fs::exists(gt_path))
            throw std::runtime_error("evaluate: no ground truth for case " + case_id + " in " + gt_dir);
        inputs.case_ids.push_back(case_id);
        inputs.preds.push_back(volume_io::load_labelmap((fs::path(pred_dir) / name).string()));
        inputs.gts.push_back(volume_io::load_labelmap(gt_path.string()));
    }

    std::vector<int> classes = parse_class_list(classes_text);
    if (classes.empty()) {
        int c_max = 2;
        for (const auto& gt : inputs.gts) c_max = std::max(c_max, gt.num_classes);
        for (int c = 1; c < c_max; ++c) classes.push_back(c);
    }

    metrics::MetricPolicy policy;
    policy.tau_mm = tau;
    const auto report = metrics::evaluate_cases(inputs, classes, policy);
    std::cout << report.to_table();
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text((fs::path(out_dir) / "report.txt").string(), report.to_table());
        write_text((fs::path(out_dir) / "report.json").string(), report.to_json() + "\n");
    }
    return 0;
}

int cmd_plot(const std::string& volume_path, const std::string& labels_path,
             const std::string& slices_text, const std::string& out_dir) {
    const Volume vol = volume_io::load_volume(volume_path);
    const LabelMap labels = volume_io::load_labelmap(labels_path);

    std::vector<SliceRequest> slices;
    std::istringstream ss(slices_text);
    std::string token;
    while (std::getline(ss, token, ',')) {
        if (token.size() < 3 || token[1] != ':')
            throw std::runtime_error("plot: slice spec must look like x:12,z:30");
        SliceRequest req;
        if (token[0] == 'x')
            req.axis = 0;
        else if (token[0] == 'y')
            req.axis = 1;
        else if (token[0] == 'z')
            req.axis = 2;
        else
            throw std::runtime_error("plot: unknown axis in slice spec '" + token + "'");
        req.index = std::stoll(token.substr(2));
        slices.push_back(req);
    }
    if (slices.empty()) throw std::runtime_error("plot: no slices requested");

    const auto written = plot_overlay(vol, labels, slices, out_dir);
    for (const auto& p : written) std::cout << "plot: wrote " << p << "\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"Ensembled residual U-shape segmentation pipeline"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic phantom dataset");
    std::string synth_out = "data/phantoms";
    int synth_cases = 4, synth_test = 0, synth_classes = 4;
    std::vector<int64_t> synth_size{64};
    uint64_t synth_seed = 0;
    double synth_noise = 0.05;
    bool synth_mirrored = false;
    synth->add_option("--out", synth_out, "Output directory");
    synth->add_option("--cases", synth_cases, "Labeled train cases");
    synth->add_option("--test-cases", synth_test, "Unlabeled test cases");
    synth->add_option("--size", synth_size, "Grid size (1 or 3 values)")->expected(1, 3);
    synth->add_option("--classes", synth_classes, "Class count including background");
    synth->add_option("--seed", synth_seed, "Seed");
    synth->add_option("--noise", synth_noise, "Gaussian noise sigma");
    synth->add_flag("--mirrored-only", synth_mirrored, "Mirrored-pair phantoms only");

    // shapes
    auto* shapes = app.add_subcommand("shapes", "Print the symbolic stage shape table");
    std::string shapes_config;
    shapes->add_option("--config", shapes_config, "Run config JSON")->required();

    // preprocess
    auto* prep = app.add_subcommand("preprocess", "Materialize normalized volumes");
    std::string prep_config, prep_out;
    prep->add_option("--config", prep_config, "Run config JSON")->required();
    prep->add_option("--out-dir", prep_out, "Override output directory");

    // train
    auto* train = app.add_subcommand("train", "Train one model");
    std::string train_config, train_out, train_resume, train_pseudo;
    int train_fold = -1, train_folds_k = 5;
    train->add_option("--config", train_config, "Run config JSON")->required();
    train->add_option("--out-dir", train_out, "Override output directory");
    train->add_option("--fold", train_fold, "Hold out this fold from training");
    train->add_option("--folds-k", train_folds_k, "Fold count used with --fold");
    train->add_option("--resume", train_resume, "Resume from checkpoint");
    train->add_option("--pseudo-manifest", train_pseudo, "Pseudo-labeled manifest for the second loss term");

    // crossval
    auto* crossval = app.add_subcommand("crossval", "k-fold cross-validation");
    std::string cv_config, cv_out;
    int cv_k = 5;
    crossval->add_option("--config", cv_config, "Run config JSON")->required();
    crossval->add_option("--out-dir", cv_out, "Override output directory");
    crossval->add_option("--k", cv_k, "Fold count");

    // predict
    auto* predict = app.add_subcommand("predict", "Sliding-window + TTA + ensemble prediction");
    std::string pr_config, pr_out, pr_cases = "test";
    std::vector<std::string> pr_models;
    bool pr_no_x = false, pr_gauss = false, pr_probs = false;
    double pr_overlap = -1.0;
    predict->add_option("--config", pr_config, "Run config JSON")->required();
    predict->add_option("--out-dir", pr_out, "Override output directory");
    predict->add_option("--models", pr_models, "Model checkpoint (repeatable)")->required();
    predict->add_flag("--no-x-flip", pr_no_x, "Exclude the x axis from TTA flips");
    predict->add_option("--overlap", pr_overlap, "Sliding-window overlap fraction");
    predict->add_flag("--gaussian-weighting", pr_gauss, "Center-weighted window averaging");
    predict->add_option("--cases", pr_cases, "Which split to predict: train|test|all");
    predict->add_flag("--save-probs", pr_probs, "Also store probability maps");

    // ensemble
    auto* ens = app.add_subcommand("ensemble", "Average stored probability maps");
    std::vector<std::string> ens_inputs;
    std::string ens_out = ".";
    ens->add_option("--inputs", ens_inputs, "Probability map .bin files")->required();
    ens->add_option("--out", ens_out, "Output directory");

    // pseudo-train
    auto* pseudo = app.add_subcommand("pseudo-train", "Generate pseudo labels, then train with them");
    std::string ps_config, ps_out;
    std::vector<std::string> ps_models;
    bool ps_no_x = false;
    pseudo->add_option("--config", ps_config, "Run config JSON")->required();
    pseudo->add_option("--out-dir", ps_out, "Override output directory");
    pseudo->add_option("--models", ps_models, "Model checkpoint (repeatable)")->required();
    pseudo->add_flag("--no-x-flip", ps_no_x, "Exclude the x axis from TTA flips");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Dice + surface Dice report");
    std::string ev_pred, ev_gt, ev_classes, ev_out;
    double ev_tau = 1.2;
    eval->add_option("--pred-dir", ev_pred, "Directory of *_pred.bin label maps")->required();
    eval->add_option("--gt-dir", ev_gt, "Directory of *_label.bin / *_gt.bin maps")->required();
    eval->add_option("--tau", ev_tau, "Surface tolerance in mm");
    eval->add_option("--classes", ev_classes, "Comma-separated class ids (default: all foreground)");
    eval->add_option("--out", ev_out, "Directory for report.txt / report.json");

    // plot
    auto* plot = app.add_subcommand("plot", "Ortho-slice PNG overlays");
    std::string pl_vol, pl_labels, pl_slices, pl_out = "plots";
    plot->add_option("--volume", pl_vol, "Background volume")->required();
    plot->add_option("--labels", pl_labels, "Label map")->required();
    plot->add_option("--slices", pl_slices, "Slice list, e.g. x:16,z:20")->required();
    plot->add_option("--out", pl_out, "Output directory");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (synth->parsed())
            return cmd_synth(synth_out, synth_cases, synth_test, synth_size, synth_classes, synth_seed,
                             synth_noise, synth_mirrored);
        if (shapes->parsed()) return cmd_shapes(shapes_config);
        if (prep->parsed()) return cmd_preprocess(prep_config, prep_out);
        if (train->parsed())
            return cmd_train(train_config, train_out, train_fold, train_folds_k, train_resume,
                             train_pseudo);
        if (crossval->parsed()) return cmd_crossval(cv_config, cv_out, cv_k);
        if (predict->parsed())
            return cmd_predict(pr_config, pr_out, pr_models, pr_no_x, pr_overlap, pr_gauss, pr_cases,
                               pr_probs);
        if (ens->parsed()) return cmd_ensemble(ens_inputs, ens_out);
        if (pseudo->parsed()) return cmd_pseudo_train(ps_config, ps_out, ps_models, ps_no_x);
        if (eval->parsed()) return cmd_evaluate(ev_pred, ev_gt, ev_tau, ev_classes, ev_out);
        if (plot->parsed()) return cmd_plot(pl_vol, pl_labels, pl_slices, pl_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand\n";
    return 1;
}

namespace {

const std::array<std::array<uint8_t, 3>, 7> kPalette{{{230, 60, 60},
                                                      {60, 200, 60},
                                                      {70, 100, 240},
                                                      {230, 200, 40},
                                                      {200, 70, 220},
                                                      {60, 210, 210},
                                                      {245, 140, 30}}};

}  // namespace

png::Image render_overlay_slice(const Volume& background, const LabelMap& labels,
                                const SliceRequest& req) {
    if (background.nx() != labels.nx() || background.ny() != labels.ny() ||
        background.nz() != labels.nz())
        throw std::invalid_argument("plot_overlay: volume/label shape mismatch");
    const std::array<int64_t, 3> ext{background.nx(), background.ny(), background.nz()};
    if (req.axis < 0 || req.axis > 2) throw std::invalid_argument("plot_overlay: bad axis");
    if (req.index < 0 || req.index >= ext[static_cast<size_t>(req.axis)])
        throw std::invalid_argument("plot_overlay: slice index " + std::to_string(req.index) +
                                    " outside axis extent " +
                                    std::to_string(ext[static_cast<size_t>(req.axis)]));

    real lo = background.grid[0], hi = background.grid[0];
    for (int64_t i = 0; i < background.grid.numel(); ++i) {
        lo = std::min(lo, background.grid[i]);
        hi = std::max(hi, background.grid[i]);
    }
    const real range = hi > lo ? hi - lo : 1.0;

    // In-plane axes (u, v) for the fixed axis.
    const int u_axis = req.axis == 0 ? 1 : 0;
    const int v_axis = req.axis == 2 ? 1 : 2;
    const int64_t W = ext[static_cast<size_t>(u_axis)];
    const int64_t H = ext[static_cast<size_t>(v_axis)];

    auto voxel_of = [&](int64_t u, int64_t v) {
        std::array<int64_t, 3> c{};
        c[static_cast<size_t>(req.axis)] = req.index;
        c[static_cast<size_t>(u_axis)] = u;
        c[static_cast<size_t>(v_axis)] = v;
        return c;
    };

    png::Image img = png::make_image(W, H);
    for (int64_t v = 0; v < H; ++v)
        for (int64_t u = 0; u < W; ++u) {
            const auto c = voxel_of(u, v);
            const double g = (background.at(c[0], c[1], c[2]) - lo) / range;
            const uint8_t gray = static_cast<uint8_t>(std::clamp(g, 0.0, 1.0) * 255.0);
            uint8_t* px = img.pixel(u, v);
            px[0] = px[1] = px[2] = gray;
        }

    // Contours where the in-plane label changes.
    for (int64_t v = 0; v < H; ++v)
        for (int64_t u = 0; u < W; ++u) {
            const auto c = voxel_of(u, v);
            const int32_t lab = labels.at(c[0], c[1], c[2]);
            if (lab == 0) continue;
            bool boundary = false;
            const int64_t du[4] = {-1, 1, 0, 0};
            const int64_t dv[4] = {0, 0, -1, 1};
            for (int d = 0; d < 4 && !boundary; ++d) {
                const int64_t uu = u + du[d], vv = v + dv[d];
                if (uu < 0 || uu >= W || vv < 0 || vv >= H) {
                    boundary = true;
                    break;
                }
                const auto cn = voxel_of(uu, vv);
                boundary = labels.at(cn[0], cn[1], cn[2]) != lab;
            }
            if (!boundary) continue;
            const auto& color =
                kPalette[static_cast<size_t>((lab - 1) % static_cast<int>(kPalette.size()))];
            uint8_t* px = img.pixel(u, v);
            px[0] = color[0];
            px[1] = color[1];
            px[2] = color[2];
        }
    return img;
}

std::vector<std::string> plot_overlay(const Volume& background, const LabelMap& labels,
                                      const std::vector<SliceRequest>& slices, const std::string& out_dir,
                                      const std::string& tag) {
    fs::create_directories(out_dir);
    std::vector<std::string> written;
    const char axis_names[3] = {'x', 'y', 'z'};
    for (const auto& req : slices) {
        const png::Image img = render_overlay_slice(background, labels, req);
        const std::string path =
            (fs::path(out_dir) / (tag + "_" + axis_names[req.axis] + std::to_string(req.index) + ".png"))
                .string();
        png::write_png(img, path);
        written.push_back(path);
    }
    return written;
}

}  // namespace abseg::cli
