#pragma once

#include <cstddef>
#include <cstring>
#include <numeric>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ssi/errors.hpp"

namespace ssi {

/// Extents per axis. The canonical axis order throughout the project is
/// (batch, time, height, width, channel); lower-rank tensors drop leading
/// axes (a dense activation is [batch, features], a target block [batch, 13]).
using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

/// Dense row-major N-dimensional array, rank 1..5. The scalar parameter
/// selects the precision: float for training, double for verification.
/// No broadcasting; every operation requires explicit matching shapes.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>);

public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(shape_size(shape_), T(0)) {
        check_shape();
    }

    Tensor(Shape shape, T fill)
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
        check_shape();
    }

    Tensor(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (data_.size() != shape_size(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + ssi::to_string(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_[axis]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::size_t flat) { return data_[flat]; }
    const T& operator[](std::size_t flat) const { return data_[flat]; }

    /// Multi-index access; the index count must equal the rank.
    template <typename... Ix>
    T& operator()(Ix... ix) {
        return data_[offset_of(ix...)];
    }

    template <typename... Ix>
    const T& operator()(Ix... ix) const {
        return data_[offset_of(ix...)];
    }

    /// Row-major flat offset of a coordinate tuple.
    template <typename... Ix>
    std::size_t offset_of(Ix... ix) const {
        static_assert(sizeof...(Ix) >= 1);
        const std::size_t idx[] = {static_cast<std::size_t>(ix)...};
        std::size_t off = 0;
        for (std::size_t a = 0; a < sizeof...(Ix); ++a)
            off = off * shape_[a] + idx[a];
        return off;
    }

    /// Inverse of offset_of: flat index back to coordinates.
    Shape coords_of(std::size_t flat) const {
        Shape c(rank());
        for (std::size_t a = rank(); a-- > 0;) {
            c[a] = flat % shape_[a];
            flat /= shape_[a];
        }
        return c;
    }

    /// Same buffer under a new shape with equal element count.
    Tensor reshaped(Shape new_shape) const& {
        Tensor copy = *this;
        return std::move(copy).reshaped(std::move(new_shape));
    }

    Tensor reshaped(Shape new_shape) && {
        if (shape_size(new_shape) != data_.size())
            throw ShapeError("reshape from " + ssi::to_string(shape_) + " to " +
                             ssi::to_string(new_shape) + " changes element count");
        Tensor out;
        out.shape_ = std::move(new_shape);
        out.data_ = std::move(data_);
        return out;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    auto begin() { return data_.begin(); }
    auto end() { return data_.end(); }
    auto begin() const { return data_.begin(); }
    auto end() const { return data_.end(); }

private:
    void check_shape() const {
        if (shape_.empty() || shape_.size() > 5)
            throw ShapeError("tensor rank must be 1..5, got shape " + ssi::to_string(shape_));
        for (auto e : shape_)
            if (e == 0) throw ShapeError("tensor extents must be positive: " + ssi::to_string(shape_));
    }

    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
using MatrixMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatrixMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// Rank-2 matrix product [m x k] * [k x n] -> [m x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul requires rank-2 tensors, got " + to_string(a.shape()) +
                         " and " + to_string(b.shape()));
    if (a.extent(1) != b.extent(0))
        throw ShapeError("matmul inner extents differ: " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    const auto m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor<T> out(Shape{m, n});
    ConstMatrixMap<T> am(a.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    ConstMatrixMap<T> bm(b.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    MatrixMap<T> cm(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    cm.noalias() = am * bm;
    return out;
}

/// Per-axis (before, after) padding amounts.
using PadAmounts = std::vector<std::pair<std::size_t, std::size_t>>;

/// Pads every axis with the given constant. Output extent per axis is
/// in + before + after; the interior block equals the input.
template <typename T>
Tensor<T> pad_constant(const Tensor<T>& t, const PadAmounts& pads, T value) {
    if (pads.size() != t.rank())
        throw ShapeError("pad_constant needs one (before, after) pair per axis of " +
                         to_string(t.shape()));
    Shape out_shape(t.rank());
    bool noop = true;
    for (std::size_t a = 0; a < t.rank(); ++a) {
        out_shape[a] = t.extent(a) + pads[a].first + pads[a].second;
        if (pads[a].first || pads[a].second) noop = false;
    }
    if (noop) return t;

    Tensor<T> out(out_shape, value);
    const std::size_t rank = t.rank();
    const std::size_t row = t.extent(rank - 1); // innermost contiguous run
    const std::size_t rows = t.size() / row;

    std::vector<std::size_t> out_strides(rank, 1);
    for (std::size_t a = rank - 1; a-- > 0;)
        out_strides[a] = out_strides[a + 1] * out_shape[a + 1];

    Shape coord(rank, 0);
    const T* src = t.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t off = pads[rank - 1].first;
        for (std::size_t a = 0; a < rank - 1; ++a)
            off += (coord[a] + pads[a].first) * out_strides[a];
        std::memcpy(out.data() + off, src, row * sizeof(T));
        src += row;
        for (std::size_t a = rank - 1; a-- > 0;) {
            if (++coord[a] < t.extent(a)) break;
            coord[a] = 0;
        }
    }
    return out;
}

/// Removes the given per-axis margins; crop(pad(t, p, v), p) == t.
template <typename T>
Tensor<T> crop(const Tensor<T>& t, const PadAmounts& pads) {
    if (pads.size() != t.rank())
        throw ShapeError("crop needs one (before, after) pair per axis of " +
                         to_string(t.shape()));
    Shape out_shape(t.rank());
    bool noop = true;
    for (std::size_t a = 0; a < t.rank(); ++a) {
        const std::size_t cut = pads[a].first + pads[a].second;
        if (cut >= t.extent(a))
            throw ShapeError("crop margins consume axis " + std::to_string(a) + " of " +
                             to_string(t.shape()));
        out_shape[a] = t.extent(a) - cut;
        if (cut) noop = false;
    }
    if (noop) return t;

    Tensor<T> out(out_shape);
    const std::size_t rank = t.rank();
    const std::size_t row = out_shape[rank - 1];
    const std::size_t rows = out.size() / row;

    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t a = rank - 1; a-- > 0;)
        in_strides[a] = in_strides[a + 1] * t.extent(a + 1);

    Shape coord(rank, 0);
    T* dst = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t off = pads[rank - 1].first;
        for (std::size_t a = 0; a < rank - 1; ++a)
            off += (coord[a] + pads[a].first) * in_strides[a];
        std::memcpy(dst, t.data() + off, row * sizeof(T));
        dst += row;
        for (std::size_t a = rank - 1; a-- > 0;) {
            if (++coord[a] < out_shape[a]) break;
            coord[a] = 0;
        }
    }
    return out;
}

/// Pointwise application, shape preserved.
template <typename T, typename F>
Tensor<T> map(const Tensor<T>& t, F&& f) {
    Tensor<T> out(t.shape());
    const T* in = t.data();
    T* o = out.data();
    for (std::size_t i = 0; i < t.size(); ++i) o[i] = f(in[i]);
    return out;
}

/// Pointwise combination of two equal-shape tensors.
template <typename T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F&& f) {
    if (!a.same_shape(b))
        throw ShapeError("zip shapes differ: " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* o = out.data();
    for (std::size_t i = 0; i < a.size(); ++i) o[i] = f(pa[i], pb[i]);
    return out;
}

template <typename T>
T sum(const Tensor<T>& t) {
    T acc = 0;
    for (std::size_t i = 0; i < t.size(); ++i) acc += t[i];
    return acc;
}

/// Precision conversion (float <-> double) preserving shape.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
    if constexpr (std::is_same_v<To, From>) {
        return t;
    } else {
        Tensor<To> out(t.shape());
        for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
        return out;
    }
}

} // namespace ssi
