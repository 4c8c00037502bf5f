#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "abseg/volume.hpp"
#include "abseg/volume_io.hpp"

namespace abseg::synthdata {

// Per-modality intensities for one structure class. CT renders flat
// constants, T1ce inverts the contrast ordering, FLAIR brightens a one-voxel
// rim at the structure boundary.
struct IntensityRule {
    double ct = 0.0;
    double t1ce = 0.0;
    double flair = 0.0;
    double flair_rim_boost = 0.0;
};

struct Shape {
    enum class Kind { sphere, box } kind = Kind::sphere;
    int class_id = 1;
    std::array<double, 3> center{0, 0, 0};  // voxel coordinates
    // sphere: radius[0]; box: half extent per axis
    std::array<double, 3> radius{0, 0, 0};
    // index of the shape this one mirrors across the x midplane, or -1;
    // mirrored shapes track their partner under per-case jitter
    int mirror_of = -1;
};

struct PhantomSpec {
    std::array<int64_t, 3> size{64, 64, 64};
    int num_classes = 4;
    uint64_t seed = 0;
    Spacing spacing{1.2, 1.2, 1.2};
    std::vector<Shape> shapes;                 // drawn in order, later wins
    std::vector<IntensityRule> rules;          // indexed by class id
    double noise_sigma = 0.05;
    std::string case_id = "phantom";

    void validate() const;
};

// Default inventory: one sphere and one box sharing foreground class 1 plus
// a mirrored sphere pair on classes 2 and 3 straddling the x midplane.
// Appearance of the pair differs only by position, which is what the x-flip
// probe needs.
PhantomSpec default_phantom_spec(std::array<int64_t, 3> size, int num_classes, uint64_t seed);

// Pair-only variant: classes {0, 1, 2}, the two structures visually identical.
PhantomSpec mirrored_pair_spec(std::array<int64_t, 3> size, uint64_t seed);

struct Phantom {
    MultiModalVolume volume;
    LabelMap labels;
};

Phantom make_phantom(const PhantomSpec& spec);

struct DatasetOptions {
    int n_cases = 4;
    int n_test_cases = 0;  // unlabeled entries appended after the train cases
    PhantomSpec spec_template;
    uint64_t seed = 0;
    bool mirrored_only = false;
    std::string out_dir;
};

// Writes n phantoms in raw+JSON format plus a manifest.json; per-case shape
// placement is jittered deterministically from (seed, case index).
volume_io::DatasetManifest make_dataset(const DatasetOptions& opts);

}  // namespace abseg::synthdata
