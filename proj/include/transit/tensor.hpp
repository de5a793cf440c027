#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "transit/common.hpp"
#include "transit/rng.hpp"

namespace transit {

// Dense row-major tensor of 64-bit reals. Rank is 1 or 2 in practice;
// every dimension must be positive.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        validate();
    }

    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        std::size_t n = 1;
        for (std::size_t d : shape) {
            if (d == 0) throw ShapeError("tensor: zero dimension in shape " + shape_str(shape));
            n *= d;
        }
        data.assign(n, 0.0);
    }

    static Tensor zeros(std::size_t r, std::size_t c) { return Tensor({r, c}); }

    static Tensor full(std::vector<std::size_t> s, double v) {
        Tensor t(std::move(s));
        t.data.assign(t.data.size(), v);
        return t;
    }

    static Tensor row(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor({1, n}, std::move(v));
    }

    static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

    static Tensor uniform(std::vector<std::size_t> s, double lo, double hi, Rng& rng) {
        Tensor t(std::move(s));
        for (double& x : t.data) x = rng.uniform(lo, hi);
        return t;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
    std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void validate() const {
        std::size_t n = 1;
        for (std::size_t d : shape) {
            if (d == 0) throw ShapeError("tensor: zero dimension in shape " + shape_str(shape));
            n *= d;
        }
        if (n != data.size())
            throw ShapeError(detail::msg("tensor: shape ", shape_str(shape), " holds ", n,
                                         " values, data has ", data.size()));
    }
};

}  // namespace transit
