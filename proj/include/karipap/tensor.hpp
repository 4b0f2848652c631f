#pragma once

#include "karipap/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace karipap {

using Shape = std::vector<std::size_t>;
using AxisList = std::vector<std::size_t>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline std::size_t element_count(std::span<const std::size_t> shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(std::span<const std::size_t> shape) {
    std::string out = "(";
    for (std::size_t k = 0; k < shape.size(); ++k) {
        if (k) out += ",";
        out += std::to_string(shape[k]);
    }
    return out + ")";
}

/// N-dimensional array of doubles, row-major (last index fastest).
///
/// An order-0 tensor is a scalar holding exactly one element. Every extent
/// is at least 1, so `size() == product(shape())` always holds.
class DenseTensor {
public:
    DenseTensor() : data_(1, 0.0) {}

    explicit DenseTensor(Shape shape) : shape_(std::move(shape)) {
        check_extents();
        data_.assign(element_count(shape_), 0.0);
    }

    DenseTensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_extents();
        if (data_.size() != element_count(shape_)) {
            throw ElementCountMismatch("shape " + shape_string(shape_) + " needs " +
                                       std::to_string(element_count(shape_)) + " values, got " +
                                       std::to_string(data_.size()));
        }
    }

    static DenseTensor scalar(double value) { return DenseTensor({}, {value}); }

    static DenseTensor filled(Shape shape, double value) {
        DenseTensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static DenseTensor ones(Shape shape) { return filled(std::move(shape), 1.0); }

    static DenseTensor identity(std::size_t n) {
        DenseTensor t({n, n});
        for (std::size_t k = 0; k < n; ++k) t.data_[k * n + k] = 1.0;
        return t;
    }

    static DenseTensor vector(std::vector<double> values) {
        const std::size_t n = values.size();
        return DenseTensor({n}, std::move(values));
    }

    static DenseTensor from_matrix(const RowMatrix& m) {
        DenseTensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
        std::copy(m.data(), m.data() + m.size(), t.data_.begin());
        return t;
    }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t order() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] std::span<double> data() noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t flat) { return data_[flat]; }
    double operator[](std::size_t flat) const { return data_[flat]; }

    [[nodiscard]] std::size_t flat_index(std::span<const std::size_t> idx) const {
        std::size_t flat = 0;
        for (std::size_t k = 0; k < shape_.size(); ++k) flat = flat * shape_[k] + idx[k];
        return flat;
    }

    double& at(std::initializer_list<std::size_t> idx) { return data_[flat_index({idx.begin(), idx.size()})]; }
    double at(std::initializer_list<std::size_t> idx) const {
        return data_[flat_index({idx.begin(), idx.size()})];
    }
    double& at(std::span<const std::size_t> idx) { return data_[flat_index(idx)]; }
    double at(std::span<const std::size_t> idx) const { return data_[flat_index(idx)]; }

    /// Row-major view of an order-2 tensor.
    [[nodiscard]] ConstMatrixMap as_matrix() const {
        require_order2();
        return {data_.data(), static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1])};
    }
    [[nodiscard]] MatrixMap as_matrix() {
        require_order2();
        return {data_.data(), static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1])};
    }

    [[nodiscard]] double squared_norm() const {
        double acc = 0.0;
        for (double v : data_) acc += v * v;
        return acc;
    }
    [[nodiscard]] double frobenius_norm() const { return std::sqrt(squared_norm()); }

    [[nodiscard]] bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    DenseTensor& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }
    DenseTensor& operator+=(const DenseTensor& other) {
        require_same_shape(other);
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += other.data_[k];
        return *this;
    }
    DenseTensor& operator-=(const DenseTensor& other) {
        require_same_shape(other);
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= other.data_[k];
        return *this;
    }

    friend DenseTensor operator+(DenseTensor a, const DenseTensor& b) { return a += b; }
    friend DenseTensor operator-(DenseTensor a, const DenseTensor& b) { return a -= b; }
    friend DenseTensor operator*(DenseTensor a, double s) { return a *= s; }
    friend DenseTensor operator*(double s, DenseTensor a) { return a *= s; }

    friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

private:
    void check_extents() const {
        for (std::size_t e : shape_) {
            if (e == 0) throw ElementCountMismatch("zero extent in shape " + shape_string(shape_));
        }
    }
    void require_order2() const {
        if (shape_.size() != 2) throw ShapeMismatch("expected order-2 tensor, got " + shape_string(shape_));
    }
    void require_same_shape(const DenseTensor& other) const {
        if (shape_ != other.shape_) {
            throw ExtentMismatch(shape_string(shape_) + " vs " + shape_string(other.shape_));
        }
    }

    Shape shape_;
    std::vector<double> data_;
};

[[nodiscard]] inline DenseTensor reshape(const DenseTensor& t, Shape new_shape) {
    if (element_count(new_shape) != t.size()) {
        throw ElementCountMismatch("cannot reshape " + shape_string(t.shape()) + " into " +
                                   shape_string(new_shape));
    }
    return DenseTensor(std::move(new_shape), t.values());
}

inline bool is_permutation_of_axes(std::span<const std::size_t> order, std::size_t n) {
    if (order.size() != n) return false;
    std::vector<bool> seen(n, false);
    for (std::size_t a : order) {
        if (a >= n || seen[a]) return false;
        seen[a] = true;
    }
    return true;
}

[[nodiscard]] inline AxisList inverse_permutation(std::span<const std::size_t> order) {
    AxisList inv(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) inv[order[k]] = k;
    return inv;
}

/// result axis k is input axis order[k]; data is physically reordered.
[[nodiscard]] inline DenseTensor permute(const DenseTensor& t, std::span<const std::size_t> order) {
    const std::size_t n = t.order();
    if (!is_permutation_of_axes(order, n)) {
        throw InvalidPermutation("order of length " + std::to_string(order.size()) +
                                 " is not a permutation of " + std::to_string(n) + " axes");
    }
    bool identity = true;
    for (std::size_t k = 0; k < n; ++k) identity = identity && order[k] == k;
    if (identity) return t;

    const Shape& in_shape = t.shape();
    std::vector<std::size_t> in_stride(n, 1);
    for (std::size_t k = n; k-- > 1;) in_stride[k - 1] = in_stride[k] * in_shape[k];

    Shape out_shape(n);
    std::vector<std::size_t> stride(n);
    for (std::size_t k = 0; k < n; ++k) {
        out_shape[k] = in_shape[order[k]];
        stride[k] = in_stride[order[k]];
    }

    std::vector<double> out(t.size());
    std::vector<std::size_t> idx(n, 0);
    std::size_t src = 0;
    const auto in = t.data();
    // Odometer over the output index, tracking the source offset incrementally.
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        out[flat] = in[src];
        for (std::size_t k = n; k-- > 0;) {
            if (++idx[k] < out_shape[k]) {
                src += stride[k];
                break;
            }
            src -= stride[k] * (out_shape[k] - 1);
            idx[k] = 0;
        }
    }
    return DenseTensor(std::move(out_shape), std::move(out));
}

[[nodiscard]] inline DenseTensor permute(const DenseTensor& t, std::initializer_list<std::size_t> order) {
    return permute(t, std::span<const std::size_t>(order.begin(), order.size()));
}

namespace detail {

inline void check_partition(std::size_t order, std::span<const std::size_t> rows,
                            std::span<const std::size_t> cols) {
    AxisList all(rows.begin(), rows.end());
    all.insert(all.end(), cols.begin(), cols.end());
    if (!is_permutation_of_axes(all, order)) {
        throw AxisPartitionError("row/column axes do not partition the " + std::to_string(order) + " axes");
    }
}

} // namespace detail

/// Rows run over `row_axes` (row-major in the listed order), columns over `col_axes`.
[[nodiscard]] inline DenseTensor matricize(const DenseTensor& t, std::span<const std::size_t> row_axes,
                                           std::span<const std::size_t> col_axes) {
    detail::check_partition(t.order(), row_axes, col_axes);
    AxisList order(row_axes.begin(), row_axes.end());
    order.insert(order.end(), col_axes.begin(), col_axes.end());
    std::size_t rows = 1;
    for (std::size_t a : row_axes) rows *= t.extent(a);
    return reshape(permute(t, order), {rows, t.size() / rows});
}

[[nodiscard]] inline DenseTensor matricize(const DenseTensor& t, const AxisList& row_axes,
                                           const AxisList& col_axes) {
    return matricize(t, std::span<const std::size_t>(row_axes), std::span<const std::size_t>(col_axes));
}

/// Inverse of `matricize` given the original shape and the same axis lists.
[[nodiscard]] inline DenseTensor dematricize(const DenseTensor& m, const Shape& original_shape,
                                             std::span<const std::size_t> row_axes,
                                             std::span<const std::size_t> col_axes) {
    detail::check_partition(original_shape.size(), row_axes, col_axes);
    AxisList order(row_axes.begin(), row_axes.end());
    order.insert(order.end(), col_axes.begin(), col_axes.end());
    Shape grouped(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) grouped[k] = original_shape[order[k]];
    return permute(reshape(m, grouped), inverse_permutation(order));
}

[[nodiscard]] inline DenseTensor dematricize(const DenseTensor& m, const Shape& original_shape,
                                             const AxisList& row_axes, const AxisList& col_axes) {
    return dematricize(m, original_shape, std::span<const std::size_t>(row_axes),
                       std::span<const std::size_t>(col_axes));
}

/// Generalized tensor dot. Paired axes are summed; the result keeps the free
/// axes of `a` followed by the free axes of `b`, each in original order.
[[nodiscard]] inline DenseTensor contract(const DenseTensor& a, std::span<const std::size_t> axes_a,
                                          const DenseTensor& b, std::span<const std::size_t> axes_b) {
    if (axes_a.size() != axes_b.size()) {
        throw ExtentMismatch("paired axis lists differ in length");
    }
    std::vector<bool> used_a(a.order(), false), used_b(b.order(), false);
    for (std::size_t k = 0; k < axes_a.size(); ++k) {
        const std::size_t xa = axes_a[k], xb = axes_b[k];
        if (xa >= a.order() || xb >= b.order() || used_a[xa] || used_b[xb]) {
            throw ExtentMismatch("invalid or repeated contraction axis");
        }
        if (a.extent(xa) != b.extent(xb)) {
            throw ExtentMismatch("axis " + std::to_string(xa) + " of " + shape_string(a.shape()) + " vs axis " +
                                 std::to_string(xb) + " of " + shape_string(b.shape()));
        }
        used_a[xa] = used_b[xb] = true;
    }
    AxisList free_a, free_b;
    Shape out_shape;
    for (std::size_t k = 0; k < a.order(); ++k) {
        if (!used_a[k]) {
            free_a.push_back(k);
            out_shape.push_back(a.extent(k));
        }
    }
    for (std::size_t k = 0; k < b.order(); ++k) {
        if (!used_b[k]) {
            free_b.push_back(k);
            out_shape.push_back(b.extent(k));
        }
    }
    const DenseTensor am = matricize(a, free_a, AxisList(axes_a.begin(), axes_a.end()));
    const DenseTensor bm = matricize(b, AxisList(axes_b.begin(), axes_b.end()), free_b);
    const std::size_t rows = am.extent(0), cols = bm.extent(1);
    std::vector<double> out(rows * cols);
    MatrixMap(out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)).noalias() =
        am.as_matrix() * bm.as_matrix();
    return DenseTensor(std::move(out_shape), std::move(out));
}

[[nodiscard]] inline DenseTensor contract(const DenseTensor& a, const AxisList& axes_a, const DenseTensor& b,
                                          const AxisList& axes_b) {
    return contract(a, std::span<const std::size_t>(axes_a), b, std::span<const std::size_t>(axes_b));
}

[[nodiscard]] inline double max_abs_diff(const DenseTensor& a, const DenseTensor& b) {
    if (a.shape() != b.shape()) throw ExtentMismatch(shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
    return worst;
}

/// ||approx - reference||_F / ||reference||_F, or the absolute error when the reference is zero.
[[nodiscard]] inline double relative_error(const DenseTensor& approx, const DenseTensor& reference) {
    if (approx.size() != reference.size()) {
        throw ExtentMismatch(shape_string(approx.shape()) + " vs " + shape_string(reference.shape()));
    }
    double diff = 0.0;
    for (std::size_t k = 0; k < approx.size(); ++k) {
        const double d = approx[k] - reference[k];
        diff += d * d;
    }
    const double ref = reference.squared_norm();
    return ref > 0.0 ? std::sqrt(diff / ref) : std::sqrt(diff);
}

} // namespace karipap
