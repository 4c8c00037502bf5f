#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "abseg/tensor.hpp"

namespace abseg {

using Spacing = std::array<double, 3>;

// One scalar grid with physical voxel spacing. Logical axes are (x, y, z)
// with x the horizontal / left-right axis; grid shape is {X, Y, Z}.
struct Volume {
    Tensor grid;  // shape {X, Y, Z}
    Spacing spacing{1.0, 1.0, 1.0};

    Volume() = default;
    Volume(Tensor g, Spacing s) : grid(std::move(g)), spacing(s) {}

    int64_t nx() const { return grid.dim(0); }
    int64_t ny() const { return grid.dim(1); }
    int64_t nz() const { return grid.dim(2); }

    real& at(int64_t x, int64_t y, int64_t z) {
        return grid[(x * ny() + y) * nz() + z];
    }
    real at(int64_t x, int64_t y, int64_t z) const {
        return grid[(x * ny() + y) * nz() + z];
    }
};

// Integer class grid aligned with a volume; 0 is background.
struct LabelMap {
    std::vector<int32_t> labels;
    std::array<int64_t, 3> shape{0, 0, 0};
    int num_classes = 0;
    Spacing spacing{1.0, 1.0, 1.0};

    LabelMap() = default;
    LabelMap(std::array<int64_t, 3> sh, int classes, Spacing sp = {1.0, 1.0, 1.0})
        : labels(static_cast<size_t>(sh[0] * sh[1] * sh[2]), 0),
          shape(sh),
          num_classes(classes),
          spacing(sp) {}

    int64_t nx() const { return shape[0]; }
    int64_t ny() const { return shape[1]; }
    int64_t nz() const { return shape[2]; }
    int64_t numel() const { return static_cast<int64_t>(labels.size()); }

    int32_t& at(int64_t x, int64_t y, int64_t z) {
        return labels[static_cast<size_t>((x * shape[1] + y) * shape[2] + z)];
    }
    int32_t at(int64_t x, int64_t y, int64_t z) const {
        return labels[static_cast<size_t>((x * shape[1] + y) * shape[2] + z)];
    }

    // Every voxel must lie in [0, num_classes).
    void validate() const;
};

// Three co-registered scalar grids sharing one shape and spacing.
struct MultiModalVolume {
    Tensor ct;     // {X, Y, Z}
    Tensor t1ce;   // {X, Y, Z}
    Tensor flair;  // {X, Y, Z}
    Spacing spacing{1.0, 1.0, 1.0};
    std::string case_id;

    std::array<int64_t, 3> shape() const {
        return {ct.dim(0), ct.dim(1), ct.dim(2)};
    }

    // Checks equal shapes, positive spacing, finite values.
    void validate() const;
};

}  // namespace abseg
