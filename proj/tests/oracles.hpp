#pragma once

// Independent reference implementations used only by the tests. None of
// them call into the library's numerical kernels.

#include "karipap/peps.hpp"
#include "karipap/tensor.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace oracle {

using karipap::DenseTensor;
using karipap::Shape;

inline DenseTensor random_tensor(Shape shape, unsigned seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    DenseTensor t(std::move(shape));
    for (double& v : t.data()) v = dist(gen);
    return t;
}

inline std::vector<std::size_t> unravel(std::size_t flat, const Shape& shape) {
    std::vector<std::size_t> idx(shape.size());
    for (std::size_t a = shape.size(); a-- > 0;) {
        idx[a] = flat % shape[a];
        flat /= shape[a];
    }
    return idx;
}

inline std::size_t ravel(const std::vector<std::size_t>& idx, const Shape& shape) {
    std::size_t flat = 0;
    for (std::size_t a = 0; a < shape.size(); ++a) flat = flat * shape[a] + idx[a];
    return flat;
}

/// Tensor dot by explicit enumeration of every index combination.
inline DenseTensor nested_contract(const DenseTensor& a, const std::vector<std::size_t>& axes_a,
                                   const DenseTensor& b, const std::vector<std::size_t>& axes_b) {
    auto contains = [](const std::vector<std::size_t>& v, std::size_t x) {
        for (auto y : v)
            if (y == x) return true;
        return false;
    };
    std::vector<std::size_t> free_a, free_b;
    for (std::size_t k = 0; k < a.order(); ++k)
        if (!contains(axes_a, k)) free_a.push_back(k);
    for (std::size_t k = 0; k < b.order(); ++k)
        if (!contains(axes_b, k)) free_b.push_back(k);
    Shape out_shape, sum_shape;
    for (auto k : free_a) out_shape.push_back(a.extent(k));
    for (auto k : free_b) out_shape.push_back(b.extent(k));
    for (auto k : axes_a) sum_shape.push_back(a.extent(k));
    std::size_t out_count = 1, sum_count = 1;
    for (auto e : out_shape) out_count *= e;
    for (auto e : sum_shape) sum_count *= e;
    DenseTensor out(out_shape.empty() ? Shape{} : out_shape);
    for (std::size_t o = 0; o < out_count; ++o) {
        const auto oi = unravel(o, out_shape);
        double acc = 0.0;
        for (std::size_t s = 0; s < sum_count; ++s) {
            const auto si = unravel(s, sum_shape);
            std::vector<std::size_t> ia(a.order()), ib(b.order());
            for (std::size_t k = 0; k < free_a.size(); ++k) ia[free_a[k]] = oi[k];
            for (std::size_t k = 0; k < free_b.size(); ++k) ib[free_b[k]] = oi[free_a.size() + k];
            for (std::size_t k = 0; k < axes_a.size(); ++k) {
                ia[axes_a[k]] = si[k];
                ib[axes_b[k]] = si[k];
            }
            acc += a[ravel(ia, a.shape())] * b[ravel(ib, b.shape())];
        }
        out[o] = acc;
    }
    return out;
}

/// Symmetric matrix as nested vectors.
using Sym = std::vector<std::vector<double>>;

inline Sym gram(const DenseTensor& m) {
    const std::size_t r = m.extent(0), c = m.extent(1);
    Sym g(r, std::vector<double>(r, 0.0));
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j)
            for (std::size_t k = 0; k < c; ++k) g[i][j] += m[i * c + k] * m[j * c + k];
    return g;
}

/// Largest `count` eigenvalues of a symmetric PSD matrix by power iteration
/// with deflation.
inline std::vector<double> power_iteration(Sym a, std::size_t count, std::size_t iters = 20000) {
    const std::size_t n = a.size();
    std::vector<double> eig;
    for (std::size_t e = 0; e < count; ++e) {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i);
        double lambda = 0.0;
        for (std::size_t it = 0; it < iters; ++it) {
            std::vector<double> w(n, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) w[i] += a[i][j] * v[j];
            double norm = 0.0;
            for (double x : w) norm += x * x;
            norm = std::sqrt(norm);
            if (norm == 0.0) break;
            for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / norm;
            if (std::abs(norm - lambda) <= 1e-15 * norm) {
                lambda = norm;
                break;
            }
            lambda = norm;
        }
        eig.push_back(lambda);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) a[i][j] -= lambda * v[i] * v[j];
    }
    return eig;
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
inline std::vector<double> jacobi_eigenvalues(Sym a) {
    const std::size_t n = a.size();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a[p][q] == 0.0) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i][i];
    return out;
}

/// Dense matrix of a 2x2 open lattice by four explicit bond loops.
inline DenseTensor loop_lattice_2x2(const karipap::PepsLattice& l) {
    const auto& s = l.spec;
    const auto& A = l.at(0, 0).data;
    const auto& B = l.at(0, 1).data;
    const auto& Cc = l.at(1, 0).data;
    const auto& D = l.at(1, 1).data;
    const std::size_t h0 = A.extent(5), h1 = Cc.extent(5), v0 = A.extent(3), v1 = B.extent(3);
    DenseTensor out({s.pad_out, s.pad_in});
    const auto& of = s.out_factors;
    const auto& inf = s.in_factors;
    for (std::size_t o0 = 0; o0 < of[0]; ++o0)
    for (std::size_t o1 = 0; o1 < of[1]; ++o1)
    for (std::size_t o2 = 0; o2 < of[2]; ++o2)
    for (std::size_t o3 = 0; o3 < of[3]; ++o3)
    for (std::size_t i0 = 0; i0 < inf[0]; ++i0)
    for (std::size_t i1 = 0; i1 < inf[1]; ++i1)
    for (std::size_t i2 = 0; i2 < inf[2]; ++i2)
    for (std::size_t i3 = 0; i3 < inf[3]; ++i3) {
        double acc = 0.0;
        for (std::size_t a = 0; a < h0; ++a)
        for (std::size_t b = 0; b < h1; ++b)
        for (std::size_t c = 0; c < v0; ++c)
        for (std::size_t d = 0; d < v1; ++d) {
            acc += A.at({o0, i0, 0, c, 0, a}) * B.at({o1, i1, 0, d, a, 0}) * Cc.at({o2, i2, c, 0, 0, b}) *
                   D.at({o3, i3, d, 0, b, 0});
        }
        const std::size_t row = ((o0 * of[1] + o1) * of[2] + o2) * of[3] + o3;
        const std::size_t col = ((i0 * inf[1] + i1) * inf[2] + i2) * inf[3] + i3;
        out[row * s.pad_in + col] = acc;
    }
    return out;
}

} // namespace oracle
