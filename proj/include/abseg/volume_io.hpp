#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "abseg/volume.hpp"

namespace abseg::volume_io {

enum class VolumeFormat { nifti1, raw_json };

// Format inferred from the file name: .nii / .nii.gz -> nifti1, .bin -> raw+json.
VolumeFormat format_from_path(const std::string& path);

// Scalar grids. The raw+json format is a little-endian binary blob with a
// JSON sidecar {shape, dtype, spacing, order:"xyz-fastest-first"}; the
// sidecar path is the data path with ".json" substituted for ".bin".
Volume load_volume(const std::string& path, VolumeFormat format);
Volume load_volume(const std::string& path);  // format from extension
void save_volume(const Volume& v, const std::string& path, VolumeFormat format);
void save_volume(const Volume& v, const std::string& path);

// Integer label grids, same two formats (raw dtype int32, NIfTI DT_INT32).
LabelMap load_labelmap(const std::string& path, VolumeFormat format);
LabelMap load_labelmap(const std::string& path);
void save_labelmap(const LabelMap& labels, const std::string& path, VolumeFormat format);
void save_labelmap(const LabelMap& labels, const std::string& path);

struct CaseEntry {
    std::string case_id;
    std::string ct_path;
    std::string t1ce_path;
    std::string flair_path;
    std::string label_path;  // empty for unlabeled (test) cases
    std::string split;       // "train" or "test"

    bool has_label() const { return !label_path.empty(); }
};

struct DatasetManifest {
    std::vector<CaseEntry> entries;
    int num_classes = 0;
    std::vector<std::string> class_names;  // optional, size num_classes when set
    std::string base_dir;                  // directory of the manifest file; paths resolve against it

    void validate() const;
    std::vector<const CaseEntry*> train_entries() const;
    std::vector<const CaseEntry*> test_entries() const;
    const CaseEntry& find_case(const std::string& case_id) const;
    std::string resolve(const std::string& path) const;
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& m, const std::string& path);

// Loads the three modalities and the label map (when present) for one entry.
MultiModalVolume load_case_volume(const DatasetManifest& m, const CaseEntry& e);
std::optional<LabelMap> load_case_labels(const DatasetManifest& m, const CaseEntry& e);

struct FoldAssignment {
    int k = 0;
    std::map<std::string, int> fold_of;

    std::vector<std::string> cases_in_fold(int fold) const;
    std::vector<std::string> cases_not_in_fold(int fold) const;
};

// Sorts train case_ids, Fisher-Yates shuffles with the given seed and deals
// round-robin, so the assignment is reproducible and fold sizes differ by at
// most one.
FoldAssignment make_folds(const DatasetManifest& manifest, int k, uint64_t seed);

}  // namespace abseg::volume_io
