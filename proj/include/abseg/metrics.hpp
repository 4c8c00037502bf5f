#pragma once

#include <array>
#include <string>
#include <vector>

#include "abseg/volume.hpp"
#include "abseg/volume_io.hpp"

namespace abseg::metrics {

struct MetricPolicy {
    double tau_mm = 1.2;      // surface tolerance, one default voxel pitch
    double empty_empty = 1.0; // score when the class is absent from both maps
    double one_empty = 0.0;   // score when exactly one map lacks the class
};

// Hard-overlap Dice 2|A&B| / (|A|+|B|) for one class id.
double dice_score(const LabelMap& pred, const LabelMap& gt, int class_id,
                  const MetricPolicy& policy = {});

// One exposed boundary face between a foreground voxel and background or the
// grid exterior.
struct SurfaceFace {
    std::array<double, 3> center_mm;
    double area_mm2;
};

std::vector<SurfaceFace> extract_surface(const LabelMap& mask, int class_id, const Spacing& spacing);

// Symmetric tolerance-overlap of boundary surfaces:
// (area of pred faces within tau of gt + area of gt faces within tau of pred)
// / (total area of both surfaces).
double surface_dice(const LabelMap& pred, const LabelMap& gt, int class_id, double tau_mm,
                    const Spacing& spacing, const MetricPolicy& policy = {});

// Exact nearest-feature squared distances from each query face center to the
// closest target face center, computed on the half-voxel lattice with a
// separable lower-envelope transform. Shared by surface_dice and the tests
// that compare it against the brute-force scan.
std::vector<double> face_distances_sq(const std::vector<SurfaceFace>& queries,
                                      const std::vector<SurfaceFace>& targets, const Spacing& spacing,
                                      const std::array<int64_t, 3>& grid_shape);

struct CaseClassScore {
    std::string case_id;
    int class_id = 0;
    double dsc = 0.0;
    double sdsc = 0.0;
};

struct EvaluationReport {
    std::vector<CaseClassScore> rows;
    std::vector<int> classes;
    std::vector<std::string> class_names;
    double tau_mm = 0.0;

    double mean_dsc(int class_id) const;
    double mean_sdsc(int class_id) const;
    double overall_mean_dsc() const;
    double overall_mean_sdsc() const;

    std::string to_table() const;  // aligned text table, Table-style DSC/SDSC grouping
    std::string to_json() const;
};

// Pairs up prediction and ground-truth label maps by case id.
struct EvaluationInputs {
    std::vector<std::string> case_ids;
    std::vector<LabelMap> preds;
    std::vector<LabelMap> gts;
};

EvaluationReport evaluate_cases(const EvaluationInputs& inputs, const std::vector<int>& classes,
                                const MetricPolicy& policy,
                                const std::vector<std::string>& class_names = {});

}  // namespace abseg::metrics
