#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmark {

// Dense row-major tensor. The engine's working type is TensorT<float>;
// the double instantiation exists so tests can run the same arithmetic
// at higher precision (finite-difference gradient checks).
template <typename T>
struct TensorT {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<std::size_t> s)
        : shape(std::move(s)), data(numel_of(shape), T(0)) {}
    TensorT(std::vector<std::size_t> s, std::vector<T> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != data.size())
            throw std::invalid_argument("tensor: shape/data size mismatch");
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) {
            if (d == 0) throw std::invalid_argument("tensor: zero dimension");
            n *= d;
        }
        return s.empty() ? 0 : n;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // 2-d accessor [n, d]
    T& at2(std::size_t n, std::size_t d) { return data[n * shape[1] + d]; }
    const T& at2(std::size_t n, std::size_t d) const { return data[n * shape[1] + d]; }

    // 4-d accessor [n, c, h, w]
    T& at4(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
        return data[((n * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    const T& at4(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return data[((n * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    // Row n of a batch tensor as its own tensor (shape minus the batch dim).
    TensorT row(std::size_t n) const {
        std::vector<std::size_t> s(shape.begin() + 1, shape.end());
        std::size_t stride = numel() / shape[0];
        TensorT out(s);
        std::copy(data.begin() + n * stride, data.begin() + (n + 1) * stride, out.data.begin());
        return out;
    }

    static std::string shape_str(const std::vector<std::size_t>& s) {
        std::string r = "[";
        for (std::size_t i = 0; i < s.size(); ++i)
            r += (i ? "," : "") + std::to_string(s[i]);
        return r + "]";
    }
};

using Tensor = TensorT<float>;

// Stack single-sample tensors into one batch tensor [n, ...shape].
template <typename T>
TensorT<T> stack_rows(const std::vector<TensorT<T>>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: empty");
    std::vector<std::size_t> s;
    s.push_back(rows.size());
    for (std::size_t d : rows[0].shape) s.push_back(d);
    TensorT<T> out(s);
    std::size_t stride = rows[0].numel();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].shape != rows[0].shape)
            throw std::invalid_argument("stack_rows: ragged shapes");
        std::copy(rows[i].data.begin(), rows[i].data.end(), out.data.begin() + i * stride);
    }
    return out;
}

}  // namespace wmark
