#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace abseg {

using real = double;

// Dense row-major tensor of doubles. The last listed dimension varies
// fastest in memory; on-disk formats use x-fastest order and transpose
// at the IO boundary (see volume_io).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(compute_numel(shape_)), real(0));
    }

    Tensor(std::vector<int64_t> shape, real fill) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(compute_numel(shape_)), fill);
    }

    static Tensor from_data(std::vector<int64_t> shape, std::vector<real> data) {
        Tensor t;
        if (compute_numel(shape) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("Tensor::from_data: shape/data size mismatch");
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<int64_t>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    real* data() { return data_.data(); }
    const real* data() const { return data_.data(); }
    std::vector<real>& storage() { return data_; }
    const std::vector<real>& storage() const { return data_; }

    real& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    real operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    void fill(real v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    static int64_t compute_numel(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

private:
    std::vector<int64_t> shape_;
    std::vector<real> data_;
};

inline std::string shape_to_string(const std::vector<int64_t>& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

}  // namespace abseg
