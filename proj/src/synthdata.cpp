#include "abseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "abseg/rng.hpp"

namespace fs = std::filesystem;

namespace abseg::synthdata {

void PhantomSpec::validate() const {
    if (num_classes < 2) throw std::invalid_argument("PhantomSpec: need at least background + 1 class");
    if (static_cast<int>(rules.size()) < num_classes)
        throw std::invalid_argument("PhantomSpec: intensity rule missing for some class");
    for (const auto& s : shapes) {
        if (s.class_id <= 0 || s.class_id >= num_classes)
            throw std::invalid_argument("PhantomSpec: shape class id " + std::to_string(s.class_id) +
                                        " outside [1," + std::to_string(num_classes - 1) + "]");
        for (int a = 0; a < 3; ++a) {
            const double r = (s.kind == Shape::Kind::sphere) ? s.radius[0] : s.radius[a];
            if (s.center[a] - r < 0 || s.center[a] + r > static_cast<double>(size[a]))
                throw std::invalid_argument("PhantomSpec: shape does not fit inside the grid");
        }
    }
}

namespace {

std::vector<IntensityRule> default_rules(int num_classes) {
    // Fixed, learnable contrast: CT bright-to-dark by class, T1ce inverted,
    // FLAIR mid-level with a bright rim.
    std::vector<IntensityRule> rules(static_cast<size_t>(num_classes));
    rules[0] = {0.05, 0.9, 0.1, 0.0};  // background
    for (int c = 1; c < num_classes; ++c) {
        const double t = static_cast<double>(c) / static_cast<double>(num_classes - 1);
        rules[static_cast<size_t>(c)].ct = 0.4 + 0.6 * t;
        rules[static_cast<size_t>(c)].t1ce = 0.9 - 0.7 * t;
        rules[static_cast<size_t>(c)].flair = 0.35 + 0.25 * t;
        rules[static_cast<size_t>(c)].flair_rim_boost = 0.4;
    }
    return rules;
}

bool inside(const Shape& s, double x, double y, double z) {
    const double dx = x - s.center[0];
    const double dy = y - s.center[1];
    const double dz = z - s.center[2];
    if (s.kind == Shape::Kind::sphere) {
        const double r = s.radius[0];
        return dx * dx + dy * dy + dz * dz <= r * r;
    }
    return std::abs(dx) <= s.radius[0] && std::abs(dy) <= s.radius[1] && std::abs(dz) <= s.radius[2];
}

}  // namespace

PhantomSpec default_phantom_spec(std::array<int64_t, 3> size, int num_classes, uint64_t seed) {
    if (num_classes < 4) throw std::invalid_argument("default_phantom_spec: needs num_classes >= 4");
    PhantomSpec spec;
    spec.size = size;
    spec.num_classes = num_classes;
    spec.seed = seed;
    spec.rules = default_rules(num_classes);

    const double X = static_cast<double>(size[0]);
    const double Y = static_cast<double>(size[1]);
    const double Z = static_cast<double>(size[2]);
    const double r = std::min({X, Y, Z}) * 0.14;

    Shape sphere;
    sphere.kind = Shape::Kind::sphere;
    sphere.class_id = 1;
    sphere.center = {X * 0.5, Y * 0.3, Z * 0.62};
    sphere.radius = {r * 1.15, 0, 0};

    Shape box;
    box.kind = Shape::Kind::box;
    box.class_id = 1;
    box.center = {X * 0.52, Y * 0.72, Z * 0.3};
    box.radius = {r * 0.9, r * 0.75, r * 0.8};

    // Mirror of center (cx,.) across the x midplane in index space is
    // (X-1-cx,.), matching the label-map mirror check.
    Shape pair_left;
    pair_left.kind = Shape::Kind::sphere;
    pair_left.class_id = 2;
    pair_left.center = {X * 0.26, Y * 0.55, Z * 0.55};
    pair_left.radius = {r, 0, 0};

    Shape pair_right = pair_left;
    pair_right.class_id = 3;
    pair_right.center[0] = (X - 1.0) - pair_left.center[0];
    pair_right.mirror_of = 2;

    spec.shapes = {sphere, box, pair_left, pair_right};
    spec.validate();
    return spec;
}

PhantomSpec mirrored_pair_spec(std::array<int64_t, 3> size, uint64_t seed) {
    PhantomSpec spec;
    spec.size = size;
    spec.num_classes = 3;
    spec.seed = seed;
    spec.rules = default_rules(3);
    // Identical appearance for both sides: class 2 copies the rule of class 1.
    spec.rules[2] = spec.rules[1];

    const double X = static_cast<double>(size[0]);
    const double Y = static_cast<double>(size[1]);
    const double Z = static_cast<double>(size[2]);
    const double r = std::min({X, Y, Z}) * 0.16;

    Shape left;
    left.kind = Shape::Kind::sphere;
    left.class_id = 1;
    left.center = {X * 0.27, Y * 0.5, Z * 0.5};
    left.radius = {r, 0, 0};

    Shape right = left;
    right.class_id = 2;
    right.center[0] = (X - 1.0) - left.center[0];
    right.mirror_of = 0;

    spec.shapes = {left, right};
    spec.validate();
    return spec;
}

Phantom make_phantom(const PhantomSpec& spec) {
    spec.validate();
    const auto [X, Y, Z] = spec.size;

    Phantom ph;
    ph.labels = LabelMap(spec.size, spec.num_classes, spec.spacing);
    for (const auto& s : spec.shapes) {
        for (int64_t x = 0; x < X; ++x)
            for (int64_t y = 0; y < Y; ++y)
                for (int64_t z = 0; z < Z; ++z)
                    if (inside(s, static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)))
                        ph.labels.at(x, y, z) = static_cast<int32_t>(s.class_id);
    }

    MultiModalVolume& v = ph.volume;
    v.case_id = spec.case_id;
    v.spacing = spec.spacing;
    v.ct = Tensor({X, Y, Z});
    v.t1ce = Tensor({X, Y, Z});
    v.flair = Tensor({X, Y, Z});

    auto rim_voxel = [&](int64_t x, int64_t y, int64_t z, int32_t c) {
        if (c == 0) return false;
        const int64_t nb[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z},
                                  {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
        for (const auto& n : nb) {
            if (n[0] < 0 || n[0] >= X || n[1] < 0 || n[1] >= Y || n[2] < 0 || n[2] >= Z) return true;
            if (ph.labels.at(n[0], n[1], n[2]) != c) return true;
        }
        return false;
    };

    Rng rng(spec.seed);
    for (int64_t x = 0; x < X; ++x)
        for (int64_t y = 0; y < Y; ++y)
            for (int64_t z = 0; z < Z; ++z) {
                const int32_t c = ph.labels.at(x, y, z);
                const IntensityRule& rule = spec.rules[static_cast<size_t>(c)];
                double fl = rule.flair;
                if (rule.flair_rim_boost != 0.0 && rim_voxel(x, y, z, c)) fl += rule.flair_rim_boost;
                const int64_t i = (x * Y + y) * Z + z;
                v.ct[i] = rule.ct + spec.noise_sigma * rng.normal();
                v.t1ce[i] = rule.t1ce + spec.noise_sigma * rng.normal();
                v.flair[i] = fl + spec.noise_sigma * rng.normal();
            }
    return ph;
}

volume_io::DatasetManifest make_dataset(const DatasetOptions& opts) {
    if (opts.n_cases < 1) throw std::invalid_argument("make_dataset: need n_cases >= 1");
    if (opts.out_dir.empty()) throw std::invalid_argument("make_dataset: out_dir is required");
    fs::create_directories(opts.out_dir);

    volume_io::DatasetManifest manifest;
    manifest.num_classes = opts.spec_template.num_classes;
    manifest.base_dir = opts.out_dir;

    const int total = opts.n_cases + opts.n_test_cases;
    for (int i = 0; i < total; ++i) {
        const bool is_test = i >= opts.n_cases;
        char id[32];
        std::snprintf(id, sizeof(id), "case_%03d", i);

        // Deterministic per-case jitter of positions and radii.
        Rng jitter(opts.seed * 1000003ULL + static_cast<uint64_t>(i));
        PhantomSpec spec = opts.mirrored_only
                               ? mirrored_pair_spec(opts.spec_template.size, 0)
                               : default_phantom_spec(opts.spec_template.size, opts.spec_template.num_classes, 0);
        spec.spacing = opts.spec_template.spacing;
        spec.noise_sigma = opts.spec_template.noise_sigma;
        spec.seed = opts.seed * 7919ULL + static_cast<uint64_t>(i) + 1;
        spec.case_id = id;
        for (size_t si = 0; si < spec.shapes.size(); ++si) {
            Shape& s = spec.shapes[si];
            // Keep mirrored pairs mirrored: jitter the first element of a
            // pair, then re-mirror the second from it.
            if (s.mirror_of >= 0) {
                const Shape& prev = spec.shapes[static_cast<size_t>(s.mirror_of)];
                s.radius = prev.radius;
                s.center = prev.center;
                s.center[0] = static_cast<double>(spec.size[0] - 1) - prev.center[0];
            } else {
                const double scale = 0.85 + 0.3 * jitter.uniform();
                for (int a = 0; a < 3; ++a) s.radius[a] *= scale;
                for (int a = 0; a < 3; ++a) {
                    const double room = 2.0;
                    const double r = (s.kind == Shape::Kind::sphere) ? s.radius[0] : s.radius[a];
                    double c = s.center[a] + jitter.uniform(-room, room);
                    // Clamp range symmetric under x -> size-1-x so mirrored
                    // partners stay inside the grid too.
                    c = std::clamp(c, r + 1.0, static_cast<double>(spec.size[a]) - 1.0 - r);
                    s.center[a] = c;
                }
            }
        }
        spec.validate();

        Phantom ph = make_phantom(spec);
        const std::string stem = std::string(id);
        volume_io::save_volume(Volume(std::move(ph.volume.ct), spec.spacing),
                               (fs::path(opts.out_dir) / (stem + "_ct.bin")).string());
        volume_io::save_volume(Volume(std::move(ph.volume.t1ce), spec.spacing),
                               (fs::path(opts.out_dir) / (stem + "_t1ce.bin")).string());
        volume_io::save_volume(Volume(std::move(ph.volume.flair), spec.spacing),
                               (fs::path(opts.out_dir) / (stem + "_flair.bin")).string());

        volume_io::CaseEntry entry;
        entry.case_id = id;
        entry.ct_path = stem + "_ct.bin";
        entry.t1ce_path = stem + "_t1ce.bin";
        entry.flair_path = stem + "_flair.bin";
        entry.split = is_test ? "test" : "train";
        if (!is_test) {
            volume_io::save_labelmap(ph.labels, (fs::path(opts.out_dir) / (stem + "_label.bin")).string());
            entry.label_path = stem + "_label.bin";
        } else {
            // Ground truth still written for evaluation, but not listed as the
            // training label of the test entry.
            volume_io::save_labelmap(ph.labels, (fs::path(opts.out_dir) / (stem + "_gt.bin")).string());
        }
        manifest.entries.push_back(std::move(entry));
    }

    volume_io::save_manifest(manifest, (fs::path(opts.out_dir) / "manifest.json").string());
    return manifest;
}

}  // namespace abseg::synthdata
