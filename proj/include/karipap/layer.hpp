#pragma once

#include "karipap/peps.hpp"
#include "karipap/trg.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace karipap {

/// A PEPS lattice used as a linear operator y = W x.
struct TensorizedLinear {
    PepsLattice lattice;
    std::size_t chi_forward = SIZE_MAX;
    bool training = false;
    std::size_t oracle_budget = kDefaultOracleBudget;

    [[nodiscard]] std::size_t in_dim() const noexcept { return lattice.spec.orig_in; }
    [[nodiscard]] std::size_t out_dim() const noexcept { return lattice.spec.orig_out; }
    [[nodiscard]] std::size_t parameter_count() const { return karipap::parameter_count(lattice); }
};

/// Per-call forward state needed by backward.
struct ForwardCache {
    DenseTensor x; // batch x orig_in
};

struct ForwardResult {
    DenseTensor y; // batch x orig_out
    std::optional<ForwardCache> cache;
};

struct LayerGradients {
    DenseTensor grad_x;                   // batch x orig_in
    std::vector<DenseTensor> site_grads;  // one per site, site shape
};

namespace detail {

inline SweepOptions sweep_options(const TensorizedLinear& layer, std::size_t batch) {
    SweepOptions opt;
    opt.chi = layer.chi_forward;
    opt.truncate = sweep_peak_estimate(layer.lattice, batch) > layer.oracle_budget;
    return opt;
}

inline std::vector<Label> per_site_labels(const GridSpec& spec, bool out) {
    const LatticeLabels lab{spec.rows, spec.cols};
    std::vector<Label> labels;
    for (std::size_t s = 0; s < spec.sites(); ++s) labels.push_back(out ? lab.out(s) : lab.in(s));
    return labels;
}

} // namespace detail

/// Batched forward: x is (batch x orig_in).
[[nodiscard]] inline ForwardResult forward(const TensorizedLinear& layer, const DenseTensor& x) {
    if (layer.chi_forward == 0) throw ShapeMismatch("chi_forward must be positive");
    ForwardResult out{apply_lattice(layer.lattice, x, ForwardOptions{layer.chi_forward, layer.oracle_budget}), {}};
    if (layer.training) out.cache = ForwardCache{x};
    return out;
}

[[nodiscard]] inline ForwardResult forward(const TensorizedLinear& layer, std::span<const double> x) {
    if (x.size() != layer.in_dim()) throw ShapeMismatch("input length does not match layer");
    return forward(layer, DenseTensor({1, x.size()}, {x.begin(), x.end()}));
}

/// Gradients of <upstream, y> with respect to the input and every site.
///
/// The output is multilinear in (x, sites), so the gradient for a site is
/// its environment: the network with that site removed, closed with the
/// cached input on the in-legs and `upstream` on the out-legs.
[[nodiscard]] inline LayerGradients backward(const TensorizedLinear& layer, const std::optional<ForwardCache>& cache,
                                             const DenseTensor& upstream) {
    if (!cache) throw MissingForwardCache("backward needs the cache of a training-mode forward call");
    const PepsLattice& l = layer.lattice;
    const GridSpec& spec = l.spec;
    const DenseTensor& x = cache->x;
    if (upstream.order() != 2 || upstream.extent(0) != x.extent(0) || upstream.extent(1) != spec.orig_out) {
        throw ShapeMismatch("upstream " + shape_string(upstream.shape()) + " does not match forward output");
    }
    const std::size_t batch = x.extent(0);
    const auto in_labels = detail::per_site_labels(spec, false);
    const auto out_labels = detail::per_site_labels(spec, true);
    const LabeledTensor x_seed = batch_seed(x, spec.pad_in, spec.in_factors, in_labels);
    const LabeledTensor u_seed = batch_seed(upstream, spec.pad_out, spec.out_factors, out_labels);
    const SweepOptions base = detail::sweep_options(layer, batch);

    LayerGradients g;
    std::vector<Label> arranged{kBatchLabel};
    arranged.insert(arranged.end(), in_labels.begin(), in_labels.end());
    const LabeledTensor gx = sweep_contract(l, u_seed, {}, base);
    g.grad_x = crop(reshape(arrange(gx, arranged), {batch, spec.pad_in}), batch, spec.orig_in);

    for (std::size_t s = 0; s < l.sites.size(); ++s) {
        SweepOptions opt = base;
        opt.hole = s;
        const LabeledTensor env = sweep_contract(l, x_seed, {u_seed}, opt);
        g.site_grads.push_back(unlabel_site(env, spec, s / l.cols(), s % l.cols(), l.sites[s].data.shape()));
    }
    return g;
}

struct FiniteDiffReport {
    double max_discrepancy = 0.0;
    std::vector<double> site_discrepancy; // per site
    double input_discrepancy = 0.0;
};

/// Audit backward against central differences of the probe loss
/// L = <y, r> for a fixed random r. Each variable's discrepancy is the
/// worst element error scaled by that variable's largest analytic entry.
[[nodiscard]] inline FiniteDiffReport finite_diff_check(const TensorizedLinear& layer, std::span<const double> x,
                                                        double epsilon, std::uint64_t probe_seed = 7) {
    TensorizedLinear work = layer;
    work.training = true;
    UniformStream rng(probe_seed);
    DenseTensor probe({1, layer.out_dim()});
    rng.fill(probe);
    const DenseTensor xin({1, x.size()}, {x.begin(), x.end()});

    auto loss = [&](const TensorizedLinear& lay, const DenseTensor& input) {
        const DenseTensor y = forward(lay, input).y;
        double acc = 0.0;
        for (std::size_t k = 0; k < y.size(); ++k) acc += y[k] * probe[k];
        return acc;
    };
    const ForwardResult fwd = forward(work, xin);
    const LayerGradients grads = backward(work, fwd.cache, probe);

    auto discrepancy = [](const std::vector<double>& fd, std::span<const double> analytic) {
        double scale = 0.0, worst = 0.0;
        for (double a : analytic) scale = std::max(scale, std::abs(a));
        for (std::size_t k = 0; k < fd.size(); ++k) worst = std::max(worst, std::abs(fd[k] - analytic[k]));
        return scale > 0.0 ? worst / scale : worst;
    };

    FiniteDiffReport report;
    for (std::size_t s = 0; s < work.lattice.sites.size(); ++s) {
        std::vector<double> fd(work.lattice.sites[s].data.size());
        for (std::size_t k = 0; k < fd.size(); ++k) {
            TensorizedLinear plus = work, minus = work;
            plus.lattice.sites[s].data[k] += epsilon;
            minus.lattice.sites[s].data[k] -= epsilon;
            fd[k] = (loss(plus, xin) - loss(minus, xin)) / (2.0 * epsilon);
        }
        const double d = discrepancy(fd, grads.site_grads[s].data());
        report.site_discrepancy.push_back(d);
        report.max_discrepancy = std::max(report.max_discrepancy, d);
    }
    std::vector<double> fd(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        DenseTensor plus = xin, minus = xin;
        plus[k] += epsilon;
        minus[k] -= epsilon;
        fd[k] = (loss(work, plus) - loss(work, minus)) / (2.0 * epsilon);
    }
    report.input_discrepancy = discrepancy(fd, grads.grad_x.data());
    report.max_discrepancy = std::max(report.max_discrepancy, report.input_discrepancy);
    return report;
}

} // namespace karipap
