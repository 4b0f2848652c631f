#pragma once

#include "karipap/tensor.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace karipap {

using Label = int;

/// A tensor whose axes carry integer labels. Contracting two labeled
/// tensors sums every label they share, which makes wiring a network a
/// matter of naming its bonds.
struct LabeledTensor {
    DenseTensor tensor;
    std::vector<Label> labels;

    [[nodiscard]] bool has(Label l) const { return std::find(labels.begin(), labels.end(), l) != labels.end(); }

    [[nodiscard]] std::size_t axis_of(Label l) const {
        const auto it = std::find(labels.begin(), labels.end(), l);
        if (it == labels.end()) throw AxisPartitionError("label " + std::to_string(l) + " not present");
        return static_cast<std::size_t>(it - labels.begin());
    }

    [[nodiscard]] std::size_t extent_of(Label l) const { return tensor.extent(axis_of(l)); }
};

/// Sum over shared labels; result axes are a's free labels then b's.
[[nodiscard]] inline LabeledTensor contract_labeled(const LabeledTensor& a, const LabeledTensor& b) {
    AxisList axes_a, axes_b;
    std::vector<Label> out;
    for (std::size_t k = 0; k < a.labels.size(); ++k) {
        if (b.has(a.labels[k])) {
            axes_a.push_back(k);
            axes_b.push_back(b.axis_of(a.labels[k]));
        } else {
            out.push_back(a.labels[k]);
        }
    }
    for (Label l : b.labels) {
        if (!a.has(l)) out.push_back(l);
    }
    return {contract(a.tensor, axes_a, b.tensor, axes_b), std::move(out)};
}

/// Permute so that axes appear in the order given by `labels`.
[[nodiscard]] inline DenseTensor arrange(const LabeledTensor& t, std::span<const Label> labels) {
    if (labels.size() != t.labels.size()) {
        throw AxisPartitionError("arrange: expected " + std::to_string(t.labels.size()) + " labels");
    }
    AxisList order;
    order.reserve(labels.size());
    for (Label l : labels) order.push_back(t.axis_of(l));
    return permute(t.tensor, order);
}

/// Sum a pair of axes of one tensor (a self-loop bond).
[[nodiscard]] inline LabeledTensor trace_pair(const LabeledTensor& t, Label first, Label second) {
    const std::size_t a = t.axis_of(first), b = t.axis_of(second);
    const std::size_t n = t.tensor.extent(a);
    if (t.tensor.extent(b) != n) throw ExtentMismatch("trace over unequal extents");
    std::vector<Label> rest_labels;
    AxisList order;
    for (std::size_t k = 0; k < t.labels.size(); ++k) {
        if (k != a && k != b) {
            order.push_back(k);
            rest_labels.push_back(t.labels[k]);
        }
    }
    order.push_back(a);
    order.push_back(b);
    const DenseTensor p = permute(t.tensor, order);
    Shape rest_shape;
    for (std::size_t k = 0; k + 2 < order.size(); ++k) rest_shape.push_back(p.extent(k));
    DenseTensor out(rest_shape);
    const std::size_t block = n * n;
    for (std::size_t r = 0; r < out.size(); ++r) {
        double acc = 0.0;
        for (std::size_t d = 0; d < n; ++d) acc += p[r * block + d * n + d];
        out[r] = acc;
    }
    return {std::move(out), std::move(rest_labels)};
}

} // namespace karipap
