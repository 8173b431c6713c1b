#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "popgrowth/common.hpp"

namespace popgrowth::nn {

// Dense row-major double tensor. Shapes are small (<= 4 dims); all model math
// runs in f64 so checkpoint round-trips and gradient checks are exact.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> s) { resize(std::move(s)); }

    void resize(std::vector<std::int64_t> s) {
        shape = std::move(s);
        data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    void zero() { std::fill(data.begin(), data.end(), 0.0); }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    // 4-d convenience accessors (N, C, H, W).
    double& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        return data[static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    double at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return data[static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    double& at2(std::int64_t i, std::int64_t j) {
        return data[static_cast<std::size_t>(i * shape[1] + j)];
    }
    double at2(std::int64_t i, std::int64_t j) const {
        return data[static_cast<std::size_t>(i * shape[1] + j)];
    }
};

}  // namespace popgrowth::nn
