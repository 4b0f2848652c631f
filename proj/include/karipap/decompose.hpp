#pragma once

#include "karipap/network.hpp"
#include "karipap/peps.hpp"
#include "karipap/svd.hpp"
#include "karipap/tensorize.hpp"
#include "karipap/trg.hpp"

#include <Eigen/Cholesky>

#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

namespace karipap {

enum class DecomposeMode {
    /// Snake TT-SVD followed by vertical-bond insertion.
    kSnakeSvd,
    /// Random lattice at bond chi refined by ALS only (comparison mode).
    kRandomAls,
};

struct DecomposeOptions {
    DecomposeMode mode = DecomposeMode::kSnakeSvd;
    bool insert_vertical_bonds = true;
    std::size_t oracle_budget = kDefaultOracleBudget;
    std::size_t random_sweeps = 8;   // kRandomAls only
    std::uint64_t seed = 0;          // kRandomAls only
    std::size_t probe_columns = 16;  // error estimate beyond the dense budget
};

struct DecomposeReport {
    std::vector<double> discarded_weights;          // snake splits, path order
    std::vector<double> vertical_discarded_weights; // vertical-bond splits
    double construction_error = 0.0;                // after the snake split only
    double reconstruction_error = 0.0;              // final, relative Frobenius vs padded W
    std::string error_method = "dense";             // dense | probe
    std::size_t chi = 0;
    std::size_t sweeps = 0;
    std::vector<double> error_history;              // after construction, then after each ALS sweep
    std::size_t vertical_bonds_inserted = 0;
    bool vertical_insertion_skipped = false;
    bool degenerate_cut = false;
    bool ridge_regularized = false;
};

/// Boustrophedon order: row 0 left to right, row 1 right to left, ...
[[nodiscard]] inline std::vector<std::pair<std::size_t, std::size_t>> snake_path(std::size_t rows, std::size_t cols) {
    std::vector<std::pair<std::size_t, std::size_t>> path;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < cols; ++k) path.emplace_back(r, r % 2 == 0 ? k : cols - 1 - k);
    }
    return path;
}

namespace detail {

inline DenseTensor padded_weight(const DenseTensor& w, const GridSpec& spec) {
    DenseTensor p({spec.pad_out, spec.pad_in});
    for (std::size_t r = 0; r < spec.orig_out; ++r) {
        for (std::size_t c = 0; c < spec.orig_in; ++c) p[r * spec.pad_in + c] = w[r * spec.orig_in + c];
    }
    return p;
}

// Direction (as a SiteAxis) of neighbour b seen from a.
inline std::size_t direction(std::pair<std::size_t, std::size_t> a, std::pair<std::size_t, std::size_t> b) {
    if (b.first == a.first) return b.second > a.second ? kRight : kLeft;
    return b.first > a.first ? kDown : kUp;
}

/// Place a chain core (prev, o, i, next) on the lattice layout.
inline DenseTensor core_to_site(const DenseTensor& core, std::optional<std::size_t> prev_dir,
                                std::optional<std::size_t> next_dir) {
    Shape shape{core.extent(1), core.extent(2), 1, 1, 1, 1};
    if (prev_dir) shape[*prev_dir] = core.extent(0);
    if (next_dir) shape[*next_dir] = core.extent(3);
    // bring bond legs into the order they take among (up, down, left, right)
    const bool prev_first = !next_dir || (prev_dir && *prev_dir < *next_dir);
    const DenseTensor p = prev_first ? permute(core, {1, 2, 0, 3}) : permute(core, {1, 2, 3, 0});
    return reshape(p, shape);
}

/// Relative reconstruction error of a lattice against the padded weight.
inline double lattice_error(const PepsLattice& l, const DenseTensor& padded, const DecomposeOptions& opt,
                            std::string* method = nullptr) {
    if (padded.size() <= opt.oracle_budget) {
        if (method) *method = "dense";
        return relative_error(contract_to_dense(l), padded);
    }
    // Probe a fixed set of columns through the forward contraction.
    if (method) *method = "probe";
    const std::size_t Q = l.spec.pad_in;
    const std::size_t count = std::min(opt.probe_columns, l.spec.orig_in);
    std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
    double diff = 0.0, ref = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t col = static_cast<std::size_t>(rng() % l.spec.orig_in);
        std::vector<double> e(l.spec.orig_in, 0.0);
        e[col] = 1.0;
        const auto y = contract_forward(l, e, ForwardOptions{SIZE_MAX, opt.oracle_budget});
        for (std::size_t r = 0; r < l.spec.orig_out; ++r) {
            const double d = y[r] - padded[r * Q + col];
            diff += d * d;
            ref += padded[r * Q + col] * padded[r * Q + col];
        }
    }
    return ref > 0.0 ? std::sqrt(diff / ref) : std::sqrt(diff);
}

/// Least squares E X = G with the ridge fallback for rank-deficient normal
/// matrices. Sets `ridged` when the fallback was used.
inline RowMatrix solve_normal(const RowMatrix& env, const RowMatrix& rhs, bool& ridged) {
    Eigen::MatrixXd normal = env.transpose() * env;
    const Eigen::MatrixXd projected = env.transpose() * rhs;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
    const double trace = normal.trace();
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-12 || !ldlt.isPositive()) {
        ridged = true;
        normal.diagonal().array() += 1e-10 * (trace > 0.0 ? trace : 1.0);
        ldlt.compute(normal);
    }
    return ldlt.solve(projected);
}

/// Everything but the given sites contracted; the removed sites' legs stay open.
inline LabeledTensor environment(const PepsLattice& l, const std::vector<std::size_t>& removed) {
    std::optional<LabeledTensor> acc;
    for (std::size_t s = 0; s < l.sites.size(); ++s) {
        if (std::find(removed.begin(), removed.end(), s) != removed.end()) continue;
        const LabeledTensor site = labeled_site(l, s / l.cols(), s % l.cols());
        acc = acc ? contract_labeled(*acc, site) : site;
    }
    return acc ? *acc : LabeledTensor{DenseTensor::scalar(1.0), {}};
}

/// Padded weight as a labeled grid tensor (out_s, in_s per site).
inline LabeledTensor labeled_target(const DenseTensor& padded, const GridSpec& spec) {
    Shape split = spec.out_factors;
    split.insert(split.end(), spec.in_factors.begin(), spec.in_factors.end());
    return {reshape(padded, split), physical_labels(spec)};
}

/// Bond labels of site s in labeled_site order (boundary legs excluded).
inline std::vector<Label> bond_labels(const GridSpec& spec, std::size_t s) {
    const LabeledTensor ref = labeled_site(DenseTensor(site_shape(spec, s / spec.cols, s % spec.cols, 1)), spec,
                                           s / spec.cols, s % spec.cols);
    return {ref.labels.begin() + 2, ref.labels.end()};
}

/// Solve for the sites `removed` jointly: the best tensor Theta over their
/// physical legs and open bonds, given every other site fixed.
inline LabeledTensor solve_block(const PepsLattice& l, const LabeledTensor& target,
                                 const std::vector<std::size_t>& removed, bool& ridged) {
    const LatticeLabels lab{l.rows(), l.cols()};
    const LabeledTensor env = environment(l, removed);
    std::vector<Label> rest_phys, open_bonds, block_phys;
    for (std::size_t s : removed) {
        block_phys.push_back(lab.out(s));
        block_phys.push_back(lab.in(s));
    }
    for (Label x : env.labels) {
        if (lab.is_bond(x)) {
            open_bonds.push_back(x);
        } else {
            rest_phys.push_back(x);
        }
    }
    std::size_t rows = 1, cols = 1, rhs_cols = 1;
    for (Label x : rest_phys) rows *= env.extent_of(x);
    for (Label x : open_bonds) cols *= env.extent_of(x);
    for (Label x : block_phys) rhs_cols *= target.extent_of(x);

    std::vector<Label> env_order = rest_phys;
    env_order.insert(env_order.end(), open_bonds.begin(), open_bonds.end());
    std::vector<Label> target_order = rest_phys;
    target_order.insert(target_order.end(), block_phys.begin(), block_phys.end());

    const DenseTensor e = reshape(arrange(env, env_order), {rows, cols});
    const DenseTensor g = reshape(arrange(target, target_order), {rows, rhs_cols});
    const RowMatrix x = solve_normal(e.as_matrix(), g.as_matrix(), ridged);

    Shape shape;
    for (Label b : open_bonds) shape.push_back(env.extent_of(b));
    for (Label p : block_phys) shape.push_back(target.extent_of(p));
    std::vector<Label> labels = open_bonds;
    labels.insert(labels.end(), block_phys.begin(), block_phys.end());
    return {reshape(DenseTensor::from_matrix(x), shape), std::move(labels)};
}

inline std::size_t environment_size(const PepsLattice& l, const std::vector<std::size_t>& removed) {
    std::size_t phys = 1, bonds = 1;
    for (std::size_t s = 0; s < l.sites.size(); ++s) {
        if (std::find(removed.begin(), removed.end(), s) != removed.end()) {
            for (std::size_t a = kUp; a <= kRight; ++a) bonds *= l.sites[s].data.extent(a);
        } else {
            phys *= l.sites[s].phys_out() * l.sites[s].phys_in();
        }
    }
    return phys * bonds;
}

} // namespace detail

/// Single-site ALS refinement. Each update solves the least-squares problem
/// for one site with the others fixed and is kept only if the error does
/// not grow. Stops early when a whole sweep improves by less than tol.
[[nodiscard]] inline std::pair<PepsLattice, DecomposeReport>
als_refine(PepsLattice l, const DenseTensor& w, std::size_t sweeps, double tol,
           const DecomposeOptions& opt = {}, DecomposeReport report = {}) {
    if (w.order() != 2 || w.extent(0) != l.spec.orig_out || w.extent(1) != l.spec.orig_in) {
        throw ShapeMismatch("weight " + shape_string(w.shape()) + " does not match lattice spec");
    }
    const DenseTensor padded = detail::padded_weight(w, l.spec);
    const LabeledTensor target = detail::labeled_target(padded, l.spec);
    double err = detail::lattice_error(l, padded, opt, &report.error_method);
    if (report.error_history.empty()) report.error_history.push_back(err);
    report.chi = std::max(report.chi, l.chi_max());

    for (std::size_t sweep = 0; sweep < sweeps; ++sweep) {
        const double start = err;
        for (std::size_t s = 0; s < l.sites.size(); ++s) {
            if (detail::environment_size(l, {s}) > opt.oracle_budget) continue;
            const std::size_t r = s / l.cols(), c = s % l.cols();
            bool ridged = false;
            const LabeledTensor theta = detail::solve_block(l, target, {s}, ridged);
            PepsLattice trial = l;
            trial.sites[s].data = unlabel_site(theta, l.spec, r, c, l.sites[s].data.shape());
            const double trial_err = detail::lattice_error(trial, padded, opt);
            if (trial_err <= err) {
                l = std::move(trial);
                err = trial_err;
                report.ridge_regularized = report.ridge_regularized || ridged;
            }
        }
        ++report.sweeps;
        report.error_history.push_back(err);
        if (start - err < tol) break;
    }
    report.reconstruction_error = err;
    return {std::move(l), std::move(report)};
}

namespace detail {

/// Give the unlinked vertical pair (top, top+cols) a direct bond: solve the
/// pair jointly, then split the pair tensor along the vertical cut with rank
/// <= chi (isometry on the upper site, weights on the lower one). Returns
/// false, leaving the lattice alone, when the result would be worse.
inline bool insert_vertical_bond(PepsLattice& l, const LabeledTensor& target, const DenseTensor& padded,
                                 std::size_t top, std::size_t chi, double tol, const DecomposeOptions& opt,
                                 double& err, DecomposeReport& report) {
    const std::size_t bottom = top + l.cols();
    const std::size_t r = top / l.cols(), c = top % l.cols();
    const LatticeLabels lab{l.rows(), l.cols()};
    bool ridged = false;
    const LabeledTensor theta = solve_block(l, target, {top, bottom}, ridged);

    std::vector<Label> top_labels{lab.out(top), lab.in(top)}, bottom_labels{lab.out(bottom), lab.in(bottom)};
    for (Label b : bond_labels(l.spec, top)) {
        if (b != lab.vertical(r, c)) top_labels.push_back(b);
    }
    for (Label b : bond_labels(l.spec, bottom)) {
        if (b != lab.vertical(r, c)) bottom_labels.push_back(b);
    }
    AxisList row_axes, col_axes;
    Shape top_shape, bottom_shape;
    for (Label x : top_labels) {
        row_axes.push_back(theta.axis_of(x));
        top_shape.push_back(theta.extent_of(x));
    }
    for (Label x : bottom_labels) {
        col_axes.push_back(theta.axis_of(x));
        bottom_shape.push_back(theta.extent_of(x));
    }
    const SvdResult svd = svd_truncate(matricize(theta.tensor, row_axes, col_axes), chi, tol);
    const std::size_t k = svd.rank();

    RowMatrix sv = svd.v.as_matrix();
    for (std::size_t j = 0; j < k; ++j) sv.row(static_cast<Eigen::Index>(j)) *= svd.s[j];
    top_shape.push_back(k);
    top_labels.push_back(lab.vertical(r, c));
    bottom_shape.insert(bottom_shape.begin(), k);
    bottom_labels.insert(bottom_labels.begin(), lab.vertical(r, c));

    PepsLattice trial = l;
    Shape top_site = l.sites[top].data.shape(), bottom_site = l.sites[bottom].data.shape();
    top_site[kDown] = k;
    bottom_site[kUp] = k;
    trial.sites[top].data =
        unlabel_site({reshape(svd.u, top_shape), top_labels}, l.spec, r, c, top_site);
    trial.sites[bottom].data = unlabel_site({reshape(DenseTensor::from_matrix(sv), bottom_shape), bottom_labels},
                                            l.spec, r + 1, c, bottom_site);
    const double trial_err = lattice_error(trial, padded, opt);
    if (trial_err > err) return false;
    l = std::move(trial);
    err = trial_err;
    report.vertical_discarded_weights.push_back(svd.discarded_weight);
    report.degenerate_cut = report.degenerate_cut || svd.degenerate_cut;
    report.ridge_regularized = report.ridge_regularized || ridged;
    return true;
}

} // namespace detail

/// Build a PEPS approximating `w`.
///
/// Stage 1 splits the grid tensor along the snake path with successive
/// truncated SVDs (bond <= chi), which already yields a valid lattice whose
/// non-path vertical bonds have extent 1. Stage 2 visits those vertical
/// pairs row-major and gives each a real bond (see insert_vertical_bond).
[[nodiscard]] inline std::pair<PepsLattice, DecomposeReport>
decompose_weight(const DenseTensor& w, const GridSpec& spec, std::size_t chi, double tol = 0.0,
                 const DecomposeOptions& opt = {}) {
    if (w.order() != 2 || w.extent(0) != spec.orig_out || w.extent(1) != spec.orig_in) {
        throw ShapeMismatch("weight " + shape_string(w.shape()) + " does not match grid spec");
    }
    if (!w.all_finite()) throw NonFiniteInput("weight contains non-finite values");
    if (chi == 0) throw ShapeMismatch("chi must be positive");
    if (const auto bad = spec.violations(); !bad.empty()) throw ShapeMismatch("invalid grid spec: " + bad.front());

    DecomposeReport report;
    report.chi = chi;
    const DenseTensor padded = detail::padded_weight(w, spec);

    if (opt.mode == DecomposeMode::kRandomAls) {
        PepsLattice l = random_lattice(spec.rows, spec.cols, spec, chi, opt.seed);
        // match the overall scale before refining
        const double norm = contract_to_dense(l).frobenius_norm();
        const double scale = norm > 0.0 ? std::pow(padded.frobenius_norm() / norm, 1.0 / double(spec.sites())) : 1.0;
        for (auto& s : l.sites) s.data *= scale;
        report.construction_error = detail::lattice_error(l, padded, opt, &report.error_method);
        return als_refine(std::move(l), w, opt.random_sweeps, 0.0, opt, std::move(report));
    }

    const auto path = snake_path(spec.rows, spec.cols);
    const std::size_t n = path.size();
    AxisList order;
    for (const auto& [r, c] : path) {
        const std::size_t s = spec.site_index(r, c);
        order.push_back(2 * s);
        order.push_back(2 * s + 1);
    }
    DenseTensor rest = permute(weight_to_grid_tensor(w, spec), order);

    PepsLattice l{spec, std::vector<SiteTensor>(n)};
    std::size_t left = 1;
    for (std::size_t k = 0; k < n; ++k) {
        const auto [r, c] = path[k];
        const std::size_t s = spec.site_index(r, c);
        const std::size_t phys = spec.out_factors[s] * spec.in_factors[s];
        DenseTensor core;
        if (k + 1 < n) {
            const DenseTensor m = reshape(rest, {left * phys, rest.size() / (left * phys)});
            const SvdResult svd = svd_truncate(m, chi, tol);
            report.discarded_weights.push_back(svd.discarded_weight);
            report.degenerate_cut = report.degenerate_cut || svd.degenerate_cut;
            core = reshape(svd.u, {left, spec.out_factors[s], spec.in_factors[s], svd.rank()});
            RowMatrix sv = svd.v.as_matrix();
            for (std::size_t j = 0; j < svd.rank(); ++j) sv.row(static_cast<Eigen::Index>(j)) *= svd.s[j];
            rest = DenseTensor::from_matrix(sv);
            left = svd.rank();
        } else {
            core = reshape(rest, {left, spec.out_factors[s], spec.in_factors[s], 1});
        }
        std::optional<std::size_t> prev_dir, next_dir;
        if (k > 0) prev_dir = detail::direction(path[k], path[k - 1]);
        if (k + 1 < n) next_dir = detail::direction(path[k], path[k + 1]);
        l.sites[s] = SiteTensor(detail::core_to_site(core, prev_dir, next_dir));
    }

    double err = detail::lattice_error(l, padded, opt, &report.error_method);
    report.construction_error = err;

    if (opt.insert_vertical_bonds) {
        const LabeledTensor target = detail::labeled_target(padded, spec);
        for (std::size_t r = 0; r + 1 < spec.rows; ++r) {
            const std::size_t turn = r % 2 == 0 ? spec.cols - 1 : 0;
            for (std::size_t c = 0; c < spec.cols; ++c) {
                if (c == turn) continue;
                const std::size_t top = spec.site_index(r, c);
                if (detail::environment_size(l, {top, top + spec.cols}) > opt.oracle_budget) {
                    report.vertical_insertion_skipped = true;
                    continue;
                }
                if (detail::insert_vertical_bond(l, target, padded, top, chi, tol, opt, err, report)) {
                    ++report.vertical_bonds_inserted;
                }
            }
        }
    }
    report.reconstruction_error = err;
    report.error_history.push_back(err);
    return {std::move(l), std::move(report)};
}

} // namespace karipap
