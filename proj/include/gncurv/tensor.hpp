#pragma once

// Dense row-major tensors over a generic scalar (double or Dual).
// Rank 1 tensors are treated as single-row matrices by the tape ops.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gncurv/dual.hpp"
#include "gncurv/errors.hpp"

namespace gncurv {

template <class S>
class TensorT {
public:
    TensorT() = default;

    /// Zero-filled tensor of the given shape.
    explicit TensorT(std::vector<std::int64_t> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), S{}) {}

    /// Tensor with explicit contents; rejects non-finite entries.
    TensorT(std::vector<std::int64_t> shape, std::vector<S> values)
        : shape_(std::move(shape)), data_(std::move(values)) {
        if (data_.size() != checked_numel(shape_))
            throw DataError("tensor: value count does not match shape");
        for (const S& x : data_)
            if (!isfinite(x)) throw DataError("tensor: non-finite entry");
    }

    static TensorT scalar(S v) { return TensorT({1}, {v}); }

    static TensorT filled(std::vector<std::int64_t> shape, S v) {
        TensorT t(std::move(shape));
        for (S& x : t.data_) x = v;
        return t;
    }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    /// Row/column view: rank-1 tensors are 1 x n, rank-2 are n x m.
    std::int64_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
    std::int64_t cols() const {
        if (shape_.empty()) return numel();
        return shape_.back();
    }

    std::span<const S> values() const { return data_; }
    std::span<S> values() { return data_; }
    const S& operator[](std::int64_t i) const { return data_[i]; }
    S& operator[](std::int64_t i) { return data_[i]; }
    const S& at(std::int64_t r, std::int64_t c) const { return data_[r * cols() + c]; }
    S& at(std::int64_t r, std::int64_t c) { return data_[r * cols() + c]; }

    bool all_finite() const {
        for (const S& x : data_)
            if (!isfinite(x)) return false;
        return true;
    }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

private:
    static std::size_t checked_numel(const std::vector<std::int64_t>& shape) {
        std::size_t n = 1;
        for (std::int64_t e : shape) {
            if (e < 0) throw DataError("tensor: negative extent");
            n *= static_cast<std::size_t>(e);
        }
        return n;
    }

    std::vector<std::int64_t> shape_;
    std::vector<S> data_;
};

using Tensor = TensorT<double>;

/// Copy of a double tensor with entries converted to another scalar type
/// (tangents zero for Dual).
template <class S>
TensorT<S> to_scalar(const Tensor& t) {
    TensorT<S> out(t.shape());
    auto vo = out.values();
    const auto vt = t.values();
    for (std::int64_t i = 0; i < t.numel(); ++i) vo[i] = S(vt[i]);
    return out;
}

/// Flattened parameter-block vector in canonical order.
using FlatVector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline std::string shape_string(const std::vector<std::int64_t>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

} // namespace gncurv
