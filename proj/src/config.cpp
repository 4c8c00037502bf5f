#include "abseg/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

using json = nlohmann::json;

namespace abseg::config {

void RunConfig::expand(int manifest_num_classes) {
    if (task == "task1") {
        tta.allowed = {true, true, true};
    } else if (task == "task2") {
        // Paired left/right structures: never flip across x.
        tta.allowed = {false, true, true};
    } else if (task != "custom") {
        throw std::invalid_argument("RunConfig: unknown task preset '" + task + "'");
    }
    // One source of truth for the paired-organ constraint: the mirror
    // augmentation uses the same allowed axes as TTA.
    augmentation.mirror_axes = tta.allowed;

    if (num_classes == 0) num_classes = manifest_num_classes;
    if (num_classes < 2)
        throw std::invalid_argument("RunConfig: num_classes unresolved (manifest has none, config has none)");
    network.num_classes = num_classes;
    network.validate();
    loss.validate();
    training.validate();
    augmentation.validate();
}

namespace {

json tta_to_json(const inference::TTAPlan& plan) { return plan.axis_names(); }

json aug_to_json(const preprocess::AugmentationPolicy& a) {
    json j;
    j["rotation_deg"] = a.rotation_deg;
    j["scale_min"] = a.scale_min;
    j["scale_max"] = a.scale_max;
    j["mirror_prob"] = a.mirror_prob;
    j["gamma_min"] = a.gamma_min;
    j["gamma_max"] = a.gamma_max;
    j["brightness_sigma"] = a.brightness_sigma;
    j["p_rotate_scale"] = a.p_rotate_scale;
    j["p_gamma"] = a.p_gamma;
    j["p_brightness"] = a.p_brightness;
    return j;
}

void aug_from_json(const json& j, preprocess::AugmentationPolicy& a) {
    if (j.contains("rotation_deg")) a.rotation_deg = j["rotation_deg"].get<std::array<double, 3>>();
    a.scale_min = j.value("scale_min", a.scale_min);
    a.scale_max = j.value("scale_max", a.scale_max);
    a.mirror_prob = j.value("mirror_prob", a.mirror_prob);
    a.gamma_min = j.value("gamma_min", a.gamma_min);
    a.gamma_max = j.value("gamma_max", a.gamma_max);
    a.brightness_sigma = j.value("brightness_sigma", a.brightness_sigma);
    a.p_rotate_scale = j.value("p_rotate_scale", a.p_rotate_scale);
    a.p_gamma = j.value("p_gamma", a.p_gamma);
    a.p_brightness = j.value("p_brightness", a.p_brightness);
}

json training_to_json(const trainer::TrainingConfig& t) {
    json j;
    j["lr0"] = t.lr0;
    j["momentum"] = t.momentum;
    j["nesterov"] = t.nesterov;
    j["weight_decay"] = t.weight_decay;
    j["epochs"] = t.epochs;
    j["batch_size"] = t.batch_size;
    j["poly_power"] = t.poly_power;
    j["steps_per_epoch"] = t.steps_per_epoch;
    j["seed"] = t.seed;
    j["pseudo_enabled"] = t.pseudo_enabled;
    j["fg_bias"] = t.fg_bias;
    j["checkpoint_interval_epochs"] = t.checkpoint_interval_epochs;
    return j;
}

void training_from_json(const json& j, trainer::TrainingConfig& t) {
    t.lr0 = j.value("lr0", t.lr0);
    t.momentum = j.value("momentum", t.momentum);
    t.nesterov = j.value("nesterov", t.nesterov);
    t.weight_decay = j.value("weight_decay", t.weight_decay);
    t.epochs = j.value("epochs", t.epochs);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.poly_power = j.value("poly_power", t.poly_power);
    t.steps_per_epoch = j.value("steps_per_epoch", t.steps_per_epoch);
    t.seed = j.value("seed", t.seed);
    t.pseudo_enabled = j.value("pseudo_enabled", t.pseudo_enabled);
    t.fg_bias = j.value("fg_bias", t.fg_bias);
    t.checkpoint_interval_epochs = j.value("checkpoint_interval_epochs", t.checkpoint_interval_epochs);
}

json loss_to_json(const losses::LossConfig& l) {
    json j;
    j["epsilon"] = l.epsilon;
    j["alpha"] = l.alpha;
    j["beta"] = l.beta;
    j["dice_aggregation"] =
        l.dice_aggregation == losses::DiceAggregation::global ? "global" : "per-class-mean";
    j["ce_class_factor"] = l.ce_class_factor;
    j["ds_weights"] = l.ds_weights;
    return j;
}

void loss_from_json(const json& j, losses::LossConfig& l) {
    l.epsilon = j.value("epsilon", l.epsilon);
    l.alpha = j.value("alpha", l.alpha);
    l.beta = j.value("beta", l.beta);
    if (j.contains("dice_aggregation")) {
        const std::string mode = j["dice_aggregation"].get<std::string>();
        if (mode == "global")
            l.dice_aggregation = losses::DiceAggregation::global;
        else if (mode == "per-class-mean")
            l.dice_aggregation = losses::DiceAggregation::per_class_mean;
        else
            throw std::invalid_argument("LossConfig: unknown dice_aggregation '" + mode + "'");
    }
    l.ce_class_factor = j.value("ce_class_factor", l.ce_class_factor);
    if (j.contains("ds_weights")) l.ds_weights = j["ds_weights"].get<std::vector<double>>();
}

}  // namespace

std::string dump_run_config(const RunConfig& cfg) {
    json j;
    j["task"] = cfg.task;
    j["num_classes"] = cfg.num_classes;
    j["network"] = json::parse(network::spec_to_json_string(cfg.network));
    j["loss"] = loss_to_json(cfg.loss);
    j["training"] = training_to_json(cfg.training);
    j["augmentation"] = aug_to_json(cfg.augmentation);
    j["patch"] = cfg.patch;
    j["tta_axes"] = tta_to_json(cfg.tta);
    j["overlap"] = cfg.overlap;
    j["gaussian_weighting"] = cfg.gaussian_weighting;
    j["ct_clip"] = {cfg.ct_clip_lo_q, cfg.ct_clip_hi_q};
    j["metric"] = {{"tau_mm", cfg.metric.tau_mm},
                   {"empty_empty", cfg.metric.empty_empty},
                   {"one_empty", cfg.metric.one_empty}};
    j["manifest"] = cfg.manifest_path;
    j["output_dir"] = cfg.output_dir;
    return j.dump(2);
}

RunConfig parse_run_config(const std::string& json_text) {
    json j = json::parse(json_text);
    RunConfig cfg;
    cfg.task = j.value("task", cfg.task);
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    if (j.contains("network")) cfg.network = network::spec_from_json_string(j["network"].dump());
    if (j.contains("loss")) loss_from_json(j["loss"], cfg.loss);
    if (j.contains("training")) training_from_json(j["training"], cfg.training);
    if (j.contains("augmentation")) aug_from_json(j["augmentation"], cfg.augmentation);
    if (j.contains("patch")) cfg.patch = j["patch"].get<std::array<int64_t, 3>>();
    if (j.contains("tta_axes"))
        cfg.tta = inference::TTAPlan::from_axes(j["tta_axes"].get<std::vector<std::string>>());
    cfg.overlap = j.value("overlap", cfg.overlap);
    cfg.gaussian_weighting = j.value("gaussian_weighting", cfg.gaussian_weighting);
    if (j.contains("ct_clip")) {
        const auto c = j["ct_clip"].get<std::array<double, 2>>();
        cfg.ct_clip_lo_q = c[0];
        cfg.ct_clip_hi_q = c[1];
    }
    if (j.contains("metric")) {
        cfg.metric.tau_mm = j["metric"].value("tau_mm", cfg.metric.tau_mm);
        cfg.metric.empty_empty = j["metric"].value("empty_empty", cfg.metric.empty_empty);
        cfg.metric.one_empty = j["metric"].value("one_empty", cfg.metric.one_empty);
    }
    cfg.manifest_path = j.value("manifest", cfg.manifest_path);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return parse_run_config(text);
    } catch (const json::exception& e) {
        throw std::runtime_error("config: bad JSON in " + path + ": " + e.what());
    }
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("config: cannot write " + path);
    out << dump_run_config(cfg) << "\n";
}

}  // namespace abseg::config
