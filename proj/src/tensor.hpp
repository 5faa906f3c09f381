#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "error.hpp"

namespace dhm {

// Dense row-major double tensor. Small and boring on purpose: the networks
// here are desk-scale and double precision keeps the finite-difference
// gradient checks meaningful.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
    }
    Tensor(std::vector<int> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        require(static_cast<std::int64_t>(data.size()) == numel_of(shape),
                ErrorCode::invalid_argument, "tensor data/shape mismatch");
    }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

inline double l2_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data) s += v * v;
    return std::sqrt(s);
}

}  // namespace dhm
