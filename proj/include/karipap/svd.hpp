#pragma once

#include "karipap/tensor.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace karipap {

/// Relative gap (w.r.t. the largest singular value) below which two
/// singular values count as one degenerate cluster.
inline constexpr double kDegeneracyTolerance = 1e-12;

struct SvdResult {
    DenseTensor u;                 // m x k
    std::vector<double> s;         // k values, non-increasing, >= 0
    DenseTensor v;                 // k x n
    double discarded_weight = 0.0; // discarded sigma^2 mass / total sigma^2 mass
    bool degenerate_cut = false;   // truncation hit a non-trivial degenerate cluster
    std::vector<double> spectrum;  // full singular spectrum, min(m, n) values

    [[nodiscard]] std::size_t rank() const noexcept { return s.size(); }

    /// u * diag(s) * v
    [[nodiscard]] DenseTensor reconstruct() const {
        RowMatrix us = u.as_matrix();
        for (std::size_t j = 0; j < s.size(); ++j) us.col(static_cast<Eigen::Index>(j)) *= s[j];
        return DenseTensor::from_matrix(us * v.as_matrix());
    }
};

/// Full singular spectrum of an order-2 tensor, non-increasing.
[[nodiscard]] inline std::vector<double> singular_values(const DenseTensor& m) {
    if (!m.all_finite()) throw NonFiniteInput("matrix contains non-finite values");
    Eigen::BDCSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(m.as_matrix()));
    const auto& sv = svd.singularValues();
    return {sv.data(), sv.data() + sv.size()};
}

/// Truncated SVD keeping at most `chi` singular values.
///
/// The kept count is min(chi, #{sigma > tol * sigma_max}, min(m, n)), never
/// below 1. A cut that would split a cluster of equal singular values moves
/// below the cluster (unless that would keep nothing); the move is flagged
/// when the cluster carries real weight. Each left singular vector is
/// signed so its largest-magnitude entry (lowest index on ties) is >= 0.
[[nodiscard]] inline SvdResult svd_truncate(const DenseTensor& m, std::size_t chi, double tol = 0.0) {
    if (m.order() != 2) throw ShapeMismatch("svd_truncate needs an order-2 tensor, got " + shape_string(m.shape()));
    if (!m.all_finite()) throw NonFiniteInput("matrix contains non-finite values");
    if (chi == 0) throw ShapeMismatch("chi must be positive");

    const Eigen::MatrixXd a = m.as_matrix();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const auto full = static_cast<std::size_t>(sv.size());
    const double sigma_max = full ? sv(0) : 0.0;

    SvdResult out;
    out.spectrum.assign(sv.data(), sv.data() + sv.size());

    std::size_t above = 0;
    while (above < full && sv(static_cast<Eigen::Index>(above)) > tol * sigma_max) ++above;
    std::size_t k = std::max<std::size_t>(1, std::min({chi, above, full}));

    if (k < full && sigma_max > 0.0) {
        const double gap_tol = kDegeneracyTolerance * sigma_max;
        auto sval = [&](std::size_t j) { return sv(static_cast<Eigen::Index>(j)); };
        if (sval(k - 1) - sval(k) <= gap_tol) {
            std::size_t start = k - 1;
            while (start > 0 && sval(start - 1) - sval(start) <= gap_tol) --start;
            if (start > 0) {
                // A cluster sitting at round-off level is just numerical zero.
                out.degenerate_cut = sval(start) > 1e-10 * sigma_max;
                k = start;
            } else {
                out.degenerate_cut = true;
            }
        }
    }

    double total = 0.0, dropped = 0.0;
    for (std::size_t j = 0; j < full; ++j) {
        const double s2 = sv(static_cast<Eigen::Index>(j)) * sv(static_cast<Eigen::Index>(j));
        total += s2;
        if (j >= k) dropped += s2;
    }
    out.discarded_weight = total > 0.0 ? dropped / total : 0.0;

    const auto kk = static_cast<Eigen::Index>(k);
    RowMatrix u = svd.matrixU().leftCols(kk);
    RowMatrix vt = svd.matrixV().leftCols(kk).transpose();
    for (Eigen::Index j = 0; j < kk; ++j) {
        Eigen::Index pivot = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < u.rows(); ++i) {
            if (std::abs(u(i, j)) > best) {
                best = std::abs(u(i, j));
                pivot = i;
            }
        }
        if (u(pivot, j) < 0.0) {
            u.col(j) *= -1.0;
            vt.row(j) *= -1.0;
        }
    }
    out.u = DenseTensor::from_matrix(u);
    out.v = DenseTensor::from_matrix(vt);
    out.s.assign(sv.data(), sv.data() + k);
    return out;
}

} // namespace karipap
