#pragma once

#include "karipap/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace karipap {

/// Largest allowed max/min ratio among the non-trivial factors of a dimension.
inline constexpr std::size_t kFactorBalance = 4;

struct FactoredDimension {
    std::size_t padded = 1;
    std::vector<std::size_t> factors;

    friend bool operator==(const FactoredDimension&, const FactoredDimension&) = default;
};

namespace detail {

// Compare ratios hi_a/lo_a < hi_b/lo_b without division.
inline bool ratio_less(std::size_t hi_a, std::size_t lo_a, std::size_t hi_b, std::size_t lo_b) {
    return hi_a * lo_b < hi_b * lo_a;
}

inline void search_factorizations(std::size_t remaining, std::size_t slots, std::size_t cap,
                                  std::vector<std::size_t>& current,
                                  std::optional<std::vector<std::size_t>>& best) {
    if (slots == 0) {
        if (remaining != 1) return;
        const std::size_t hi = current.front(), lo = current.back();
        if (hi > kFactorBalance * lo) return;
        if (!best) {
            best = current;
            return;
        }
        const std::size_t bhi = best->front(), blo = best->back();
        if (ratio_less(hi, lo, bhi, blo) || (!ratio_less(bhi, blo, hi, lo) && current < *best)) best = current;
        return;
    }
    const std::size_t floor_factor = current.empty() ? 2 : std::max<std::size_t>(2, (current.front() + 3) / 4);
    for (std::size_t f = std::min(cap, remaining); f >= floor_factor; --f) {
        if (remaining % f) continue;
        // the remaining slots must fit factors in [floor_factor, f]
        std::size_t smallest = 1;
        for (std::size_t s = 1; s < slots; ++s) smallest *= floor_factor;
        if (remaining / f < smallest) continue;
        current.push_back(f);
        search_factorizations(remaining / f, slots - 1, f, current, best);
        current.pop_back();
    }
}

} // namespace detail

/// Smallest padded_d >= d admitting a balanced factorization into k factors.
///
/// The number of non-trivial (>= 2) factors is min(k, floor(log2 d)); any
/// remaining slots hold 1. Among the valid factorizations of padded_d the
/// most balanced one wins, ties broken by the lexicographically smallest
/// non-increasing list.
[[nodiscard]] inline FactoredDimension factor_dimension(std::size_t d, std::size_t k) {
    if (d == 0 || k == 0) throw ShapeMismatch("factor_dimension needs d >= 1 and k >= 1");
    if (k == 1) return {d, {d}};
    if (d == 1) return {1, std::vector<std::size_t>(k, 1)};

    const auto nontrivial = std::min<std::size_t>(k, static_cast<std::size_t>(std::bit_width(d) - 1));
    for (std::size_t p = d;; ++p) {
        std::optional<std::vector<std::size_t>> best;
        std::vector<std::size_t> current;
        detail::search_factorizations(p, nontrivial, p, current, best);
        if (best) {
            best->resize(k, 1);
            return {p, std::move(*best)};
        }
    }
}

/// How a (orig_out x orig_in) matrix is spread over a rows x cols lattice.
/// Site s (row-major) owns out_factors[s] and in_factors[s].
struct GridSpec {
    std::size_t rows = 1;
    std::size_t cols = 1;
    std::vector<std::size_t> out_factors;
    std::vector<std::size_t> in_factors;
    std::size_t orig_out = 1;
    std::size_t orig_in = 1;
    std::size_t pad_out = 1;
    std::size_t pad_in = 1;

    [[nodiscard]] std::size_t sites() const noexcept { return rows * cols; }
    [[nodiscard]] std::size_t site_index(std::size_t r, std::size_t c) const noexcept { return r * cols + c; }

    /// Empty when every invariant holds, otherwise one message per violation.
    [[nodiscard]] std::vector<std::string> violations() const {
        std::vector<std::string> out;
        if (rows == 0 || cols == 0) out.emplace_back("grid dimensions must be positive");
        if (out_factors.size() != sites() || in_factors.size() != sites()) {
            out.emplace_back("factor lists must have rows*cols entries");
            return out;
        }
        auto check = [&](const std::vector<std::size_t>& f, std::size_t padded, std::size_t orig,
                         const char* which) {
            std::size_t prod = 1, hi = 0, lo = 0;
            for (std::size_t x : f) {
                if (x == 0) out.push_back(std::string(which) + " factor of 0");
                prod *= x;
                if (x > 1) {
                    hi = std::max(hi, x);
                    lo = lo ? std::min(lo, x) : x;
                }
            }
            if (prod != padded) out.push_back(std::string(which) + " factors do not multiply to the padded dim");
            if (padded < orig) out.push_back(std::string(which) + " padded dim below original");
            if (lo && hi > kFactorBalance * lo) out.push_back(std::string(which) + " factors violate balance rule");
            if (padded > 1 && hi == 0) out.push_back(std::string(which) + " has no non-trivial factor");
        };
        check(out_factors, pad_out, orig_out, "out");
        check(in_factors, pad_in, orig_in, "in");
        return out;
    }

    friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

[[nodiscard]] inline GridSpec make_grid_spec(std::size_t out_dim, std::size_t in_dim, std::size_t rows,
                                             std::size_t cols) {
    if (rows == 0 || cols == 0) throw ShapeMismatch("grid must have at least one site");
    const auto out = factor_dimension(out_dim, rows * cols);
    const auto in = factor_dimension(in_dim, rows * cols);
    return {rows, cols, out.factors, in.factors, out_dim, in_dim, out.padded, in.padded};
}

namespace detail {

inline AxisList site_interleave(std::size_t n) {
    AxisList order;
    for (std::size_t s = 0; s < n; ++s) {
        order.push_back(s);
        order.push_back(n + s);
    }
    return order;
}

} // namespace detail

/// Zero-pad W to (pad_out, pad_in), split rows by out_factors and columns by
/// in_factors, and interleave so the axes read (o_0, i_0, o_1, i_1, ...).
[[nodiscard]] inline DenseTensor weight_to_grid_tensor(const DenseTensor& w, const GridSpec& spec) {
    if (w.order() != 2 || w.extent(0) != spec.orig_out || w.extent(1) != spec.orig_in) {
        throw ShapeMismatch("weight " + shape_string(w.shape()) + " does not match grid spec (" +
                            std::to_string(spec.orig_out) + "," + std::to_string(spec.orig_in) + ")");
    }
    DenseTensor padded({spec.pad_out, spec.pad_in});
    for (std::size_t r = 0; r < spec.orig_out; ++r) {
        for (std::size_t c = 0; c < spec.orig_in; ++c) padded[r * spec.pad_in + c] = w[r * spec.orig_in + c];
    }
    Shape split = spec.out_factors;
    split.insert(split.end(), spec.in_factors.begin(), spec.in_factors.end());
    return permute(reshape(padded, split), detail::site_interleave(spec.sites()));
}

/// Inverse of weight_to_grid_tensor: the (pad_out x pad_in) matrix, uncropped.
[[nodiscard]] inline DenseTensor grid_tensor_to_padded(const DenseTensor& grid, const GridSpec& spec) {
    const AxisList inv = inverse_permutation(detail::site_interleave(spec.sites()));
    return reshape(permute(grid, inv), {spec.pad_out, spec.pad_in});
}

[[nodiscard]] inline DenseTensor crop(const DenseTensor& padded, std::size_t rows, std::size_t cols) {
    DenseTensor out({rows, cols});
    const std::size_t stride = padded.extent(1);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = padded[r * stride + c];
    }
    return out;
}

[[nodiscard]] inline DenseTensor grid_tensor_to_weight(const DenseTensor& grid, const GridSpec& spec) {
    return crop(grid_tensor_to_padded(grid, spec), spec.orig_out, spec.orig_in);
}

} // namespace karipap
