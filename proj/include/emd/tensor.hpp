#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "emd/errors.hpp"

namespace emd {

template <typename T>
class Tape;

/// Dense row-major tensor. The shape is dynamic (rank 1 to 4 in practice).
/// When `node >= 0` the tensor is tracked on `tape` and participates in
/// backward passes; plain data tensors keep node == -1.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;
    bool requires_grad = false;
    int node = -1;
    Tape<T>* tape = nullptr;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape_, T fill = T(0))
        : shape(std::move(shape_)), data(count(shape), fill) {}

    static std::size_t count(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t(1),
                               [](std::size_t a, std::size_t b) { return a * b; });
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    /// Element access for the common NCHW case.
    T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    const T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) os << 'x';
            os << shape[i];
        }
        os << ']';
        return os.str();
    }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
        return out;
    }
};

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
    return Tensor<T>(t.shape);
}

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.numel() != b.numel())
        throw std::invalid_argument(msg("dot: size mismatch ", a.numel(), " vs ", b.numel()));
    T acc = T(0);
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a.data[i] * b.data[i];
    return acc;
}

} // namespace emd
