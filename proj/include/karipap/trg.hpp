#pragma once

#include "karipap/network.hpp"
#include "karipap/peps.hpp"
#include "karipap/svd.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <thread>
#include <vector>

namespace karipap {

/// Axis layout of every TRG network tensor: (up, down, left, right).
enum NetAxis : std::size_t { kNetUp = 0, kNetDown = 1, kNetLeft = 2, kNetRight = 3 };

/// Constant c of the intermediate-size bound: no tensor built inside a
/// trg_step exceeds c * chi_eff^6 elements, where chi_eff is the larger of
/// the truncation chi and the widest bond entering the step.
inline constexpr double kIntermediateBoundConstant = 1.0;

/// Rectangular grid of order-4 tensors, row-major. Open networks carry
/// extent-1 outward legs; periodic networks wrap both directions.
struct TrgNetwork {
    std::size_t rows = 1;
    std::size_t cols = 1;
    std::vector<DenseTensor> tensors;
    bool periodic = false;
    std::size_t steps = 0;
    double accumulated_discarded_weight = 0.0;
    /// Largest intermediate element count seen so far, and the largest
    /// ratio of that count to chi_eff^6 seen in any one step.
    std::size_t max_intermediate = 0;
    double max_bound_ratio = 0.0;

    [[nodiscard]] const DenseTensor& at(std::size_t r, std::size_t c) const { return tensors.at(r * cols + c); }
    [[nodiscard]] DenseTensor& at(std::size_t r, std::size_t c) { return tensors.at(r * cols + c); }

    [[nodiscard]] std::size_t max_bond() const {
        std::size_t b = 1;
        for (const auto& t : tensors) b = std::max({b, t.extent(0), t.extent(1), t.extent(2), t.extent(3)});
        return b;
    }

    /// Empty when shared bonds agree (and open edges have extent 1).
    [[nodiscard]] std::vector<std::string> violations() const {
        std::vector<std::string> out;
        if (tensors.size() != rows * cols) {
            out.emplace_back("tensor count differs from grid size");
            return out;
        }
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                const DenseTensor& t = at(r, c);
                if (t.order() != 4) {
                    out.push_back("tensor at (" + std::to_string(r) + "," + std::to_string(c) + ") is not order 4");
                    continue;
                }
                const bool last_c = c + 1 == cols, last_r = r + 1 == rows;
                if (!last_c || periodic) {
                    if (t.extent(kNetRight) != at(r, last_c ? 0 : c + 1).extent(kNetLeft)) {
                        out.push_back("horizontal bond mismatch at (" + std::to_string(r) + "," + std::to_string(c) + ")");
                    }
                } else if (t.extent(kNetRight) != 1) {
                    out.push_back("open right edge extent at row " + std::to_string(r));
                }
                if (!last_r || periodic) {
                    if (t.extent(kNetDown) != at(last_r ? 0 : r + 1, c).extent(kNetUp)) {
                        out.push_back("vertical bond mismatch at (" + std::to_string(r) + "," + std::to_string(c) + ")");
                    }
                } else if (t.extent(kNetDown) != 1) {
                    out.push_back("open bottom edge extent at column " + std::to_string(c));
                }
                if (!periodic && r == 0 && t.extent(kNetUp) != 1) out.emplace_back("open top edge extent");
                if (!periodic && c == 0 && t.extent(kNetLeft) != 1) out.emplace_back("open left edge extent");
            }
        }
        return out;
    }
};

/// Network of random uniform tensors with every interior bond = `bond`.
[[nodiscard]] inline TrgNetwork random_network(std::size_t rows, std::size_t cols, std::size_t bond,
                                               std::uint64_t seed, bool periodic = false) {
    TrgNetwork net{rows, cols, {}, periodic};
    UniformStream rng(seed);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            DenseTensor t({periodic || r > 0 ? bond : 1, periodic || r + 1 < rows ? bond : 1,
                           periodic || c > 0 ? bond : 1, periodic || c + 1 < cols ? bond : 1});
            rng.fill(t);
            net.tensors.push_back(std::move(t));
        }
    }
    return net;
}

[[nodiscard]] inline TrgNetwork constant_network(std::size_t rows, std::size_t cols, std::size_t bond, double value,
                                                 bool periodic = false) {
    TrgNetwork net{rows, cols, {}, periodic};
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            net.tensors.push_back(DenseTensor::filled({periodic || r > 0 ? bond : 1, periodic || r + 1 < rows ? bond : 1,
                                                       periodic || c > 0 ? bond : 1, periodic || c + 1 < cols ? bond : 1},
                                                      value));
        }
    }
    return net;
}

/// Brute-force oracle: enumerate every bond assignment and sum the products
/// of tensor entries.
[[nodiscard]] inline double brute_force_contract(const TrgNetwork& net, std::size_t budget = kDefaultOracleBudget) {
    const std::size_t R = net.rows, C = net.cols, n = R * C;
    // per site: bond slot index for (up, down, left, right); SIZE_MAX = extent-1 open leg
    std::vector<std::array<std::size_t, 4>> slot(n, {SIZE_MAX, SIZE_MAX, SIZE_MAX, SIZE_MAX});
    std::vector<std::size_t> extents;
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
            if (c + 1 < C || net.periodic) {
                const std::size_t nb = r * C + (c + 1) % C;
                slot[r * C + c][kNetRight] = extents.size();
                slot[nb][kNetLeft] = extents.size();
                extents.push_back(net.at(r, c).extent(kNetRight));
            }
            if (r + 1 < R || net.periodic) {
                const std::size_t nb = ((r + 1) % R) * C + c;
                slot[r * C + c][kNetDown] = extents.size();
                slot[nb][kNetUp] = extents.size();
                extents.push_back(net.at(r, c).extent(kNetDown));
            }
        }
    }
    std::size_t configs = 1;
    for (std::size_t e : extents) {
        configs *= e;
        if (configs > budget) throw OracleBudgetExceeded("bond configurations exceed oracle budget");
    }
    // Depth-first over bond assignments; a site's entry joins the running
    // product as soon as its last bond is fixed, so shared prefixes are reused.
    const std::size_t nb = extents.size();
    std::vector<std::vector<std::size_t>> completes(nb + 1);
    for (std::size_t s = 0; s < n; ++s) {
        std::size_t last = 0;
        bool any = false;
        for (std::size_t a = 0; a < 4; ++a) {
            if (slot[s][a] != SIZE_MAX) {
                last = any ? std::max(last, slot[s][a]) : slot[s][a];
                any = true;
            }
        }
        completes[any ? last + 1 : 0].push_back(s);
    }
    std::vector<std::size_t> cfg(nb, 0);
    auto entry = [&](std::size_t s) {
        const DenseTensor& t = net.tensors[s];
        std::size_t idx[4];
        for (std::size_t a = 0; a < 4; ++a) idx[a] = slot[s][a] == SIZE_MAX ? 0 : cfg[slot[s][a]];
        return t[((idx[0] * t.extent(1) + idx[1]) * t.extent(2) + idx[2]) * t.extent(3) + idx[3]];
    };
    double total = 0.0;
    auto descend = [&](auto&& self, std::size_t level, double prod) -> void {
        for (std::size_t s : completes[level]) prod *= entry(s);
        if (level == nb) {
            total += prod;
            return;
        }
        for (cfg[level] = 0; cfg[level] < extents[level]; ++cfg[level]) self(self, level + 1, prod);
    };
    descend(descend, 0, 1.0);
    return total;
}

namespace detail {

inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t k = 0; k < count; ++k) fn(k);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t workers = std::min(threads, count);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t k = w; k < count; k += workers) fn(k);
        });
    }
    for (auto& t : pool) t.join();
}

struct StepProbe {
    std::size_t max_elements = 0;
    void see(std::size_t n) { max_elements = std::max(max_elements, n); }
};

/// R factor of the QR decomposition of `m` (rows x cols), shape min(rows, cols) x cols.
inline RowMatrix qr_r_factor(const RowMatrix& m) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    const Eigen::Index k = std::min(m.rows(), m.cols());
    RowMatrix r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    return r;
}

/// Truncate the bond joining leg `leg_x` of x to leg `leg_y` of y down to at
/// most chi, using the QR-projector construction: with X = Qx Rx and
/// Y = Qy Ry, the truncated SVD of Rx Ry^T yields projectors that keep the
/// best rank-chi approximation of the bond matrix X Y^T. Returns the
/// discarded weight.
inline double truncate_bond(DenseTensor& x, std::size_t leg_x, DenseTensor& y, std::size_t leg_y, std::size_t chi,
                            StepProbe& probe) {
    const std::size_t bond = x.extent(leg_x);
    if (bond <= chi) return 0.0;
    auto others = [](std::size_t order, std::size_t leg) {
        AxisList a;
        for (std::size_t k = 0; k < order; ++k) {
            if (k != leg) a.push_back(k);
        }
        return a;
    };
    const DenseTensor xm = matricize(x, others(x.order(), leg_x), AxisList{leg_x});
    const DenseTensor ym = matricize(y, others(y.order(), leg_y), AxisList{leg_y});
    probe.see(xm.size());
    probe.see(ym.size());
    const RowMatrix rx = qr_r_factor(xm.as_matrix());
    const RowMatrix ry = qr_r_factor(ym.as_matrix());
    const DenseTensor z = DenseTensor::from_matrix(rx * ry.transpose());
    probe.see(z.size());
    const SvdResult svd = svd_truncate(z, chi);
    const auto k = static_cast<Eigen::Index>(svd.rank());
    Eigen::VectorXd inv_sqrt(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const double s = svd.s[static_cast<std::size_t>(j)];
        inv_sqrt(j) = s > 0.0 ? 1.0 / std::sqrt(s) : 0.0;
    }
    const RowMatrix px = ry.transpose() * svd.v.as_matrix().transpose() * inv_sqrt.asDiagonal();
    const RowMatrix py = rx.transpose() * svd.u.as_matrix() * inv_sqrt.asDiagonal();

    auto apply = [&](const DenseTensor& t, std::size_t leg, const RowMatrix& p) {
        // contract leg with p (bond x k) and move the new leg back into place
        DenseTensor moved = contract(t, AxisList{leg}, DenseTensor::from_matrix(p), AxisList{0});
        AxisList order;
        for (std::size_t a = 0; a + 1 < t.order(); ++a) order.push_back(a);
        order.insert(order.begin() + static_cast<std::ptrdiff_t>(leg), t.order() - 1);
        return permute(moved, order);
    };
    x = apply(x, leg_x, px);
    y = apply(y, leg_y, py);
    probe.see(x.size());
    probe.see(y.size());
    return svd.discarded_weight;
}

// Sum self-loop bonds of a periodic network whose extent in a direction is 1.
inline void absorb_self_loops(TrgNetwork& net) {
    if (!net.periodic) return;
    auto trace_legs = [](const DenseTensor& t, std::size_t a, std::size_t b) {
        const LabeledTensor lt{t, {0, 1, 2, 3}};
        const LabeledTensor tr = trace_pair(lt, static_cast<Label>(a), static_cast<Label>(b));
        Shape shape{1, 1, 1, 1};
        for (std::size_t k = 0; k < tr.labels.size(); ++k) shape[static_cast<std::size_t>(tr.labels[k])] = tr.tensor.extent(k);
        return reshape(tr.tensor, shape);
    };
    if (net.rows == 1) {
        for (auto& t : net.tensors) t = trace_legs(t, kNetUp, kNetDown);
    }
    if (net.cols == 1) {
        for (auto& t : net.tensors) t = trace_legs(t, kNetLeft, kNetRight);
    }
    if (net.rows == 1 && net.cols == 1) net.periodic = false;
}

} // namespace detail

/// One coarse-graining step: a horizontal pass (pair columns 2j, 2j+1, fuse
/// their vertical legs, truncate every vertical bond to chi) followed by the
/// same vertical pass on rows. Odd edges are padded with identity tensors.
/// Grid dims halve (ceiling) in each direction with extent >= 2.
[[nodiscard]] inline TrgNetwork trg_step(TrgNetwork net, std::size_t chi, std::size_t threads = 1) {
    if (chi == 0) throw ShapeMismatch("chi must be positive");
    detail::absorb_self_loops(net);
    const double chi_eff = static_cast<double>(std::max(chi, net.max_bond()));
    detail::StepProbe probe;
    double discarded = 0.0;

    if (net.cols >= 2) {
        const std::size_t R = net.rows, C = net.cols, Cn = (C + 1) / 2;
        std::vector<DenseTensor> merged(R * Cn);
        std::vector<std::size_t> sizes(R * Cn, 0);
        detail::parallel_for(R * Cn, threads, [&](std::size_t k) {
            const std::size_t r = k / Cn, j = k % Cn;
            const DenseTensor& a = net.at(r, 2 * j);
            DenseTensor b;
            if (2 * j + 1 < C) {
                b = net.at(r, 2 * j + 1);
            } else {
                const std::size_t e = a.extent(kNetRight);
                b = reshape(DenseTensor::identity(e), {1, 1, e, e});
            }
            // (u1,d1,l1) x (u2,d2,r2)
            const DenseTensor m = contract(a, AxisList{kNetRight}, b, AxisList{kNetLeft});
            sizes[k] = m.size();
            const DenseTensor p = permute(m, {0, 3, 1, 4, 2, 5});
            merged[k] = reshape(p, {p.extent(0) * p.extent(1), p.extent(2) * p.extent(3), p.extent(4), p.extent(5)});
        });
        for (std::size_t s : sizes) probe.see(s);
        net.tensors = std::move(merged);
        net.cols = Cn;
        for (std::size_t j = 0; j < Cn; ++j) {
            for (std::size_t r = 0; r + 1 < R; ++r) {
                discarded += detail::truncate_bond(net.at(r, j), kNetDown, net.at(r + 1, j), kNetUp, chi, probe);
            }
            if (net.periodic && R >= 2) {
                discarded += detail::truncate_bond(net.at(R - 1, j), kNetDown, net.at(0, j), kNetUp, chi, probe);
            }
        }
        detail::absorb_self_loops(net);
    }

    if (net.rows >= 2) {
        const std::size_t R = net.rows, C = net.cols, Rn = (R + 1) / 2;
        std::vector<DenseTensor> merged(Rn * C);
        std::vector<std::size_t> sizes(Rn * C, 0);
        detail::parallel_for(Rn * C, threads, [&](std::size_t k) {
            const std::size_t i = k / C, c = k % C;
            const DenseTensor& a = net.at(2 * i, c);
            DenseTensor b;
            if (2 * i + 1 < R) {
                b = net.at(2 * i + 1, c);
            } else {
                const std::size_t e = a.extent(kNetDown);
                b = reshape(DenseTensor::identity(e), {e, e, 1, 1});
            }
            // (u1,l1,r1) x (d2,l2,r2)
            const DenseTensor m = contract(a, AxisList{kNetDown}, b, AxisList{kNetUp});
            sizes[k] = m.size();
            const DenseTensor p = permute(m, {0, 3, 1, 4, 2, 5});
            merged[k] = reshape(p, {p.extent(0), p.extent(1), p.extent(2) * p.extent(3), p.extent(4) * p.extent(5)});
        });
        for (std::size_t s : sizes) probe.see(s);
        net.tensors = std::move(merged);
        net.rows = Rn;
        for (std::size_t i = 0; i < Rn; ++i) {
            for (std::size_t c = 0; c + 1 < C; ++c) {
                discarded += detail::truncate_bond(net.at(i, c), kNetRight, net.at(i, c + 1), kNetLeft, chi, probe);
            }
            if (net.periodic && C >= 2) {
                discarded += detail::truncate_bond(net.at(i, C - 1), kNetRight, net.at(i, 0), kNetLeft, chi, probe);
            }
        }
        detail::absorb_self_loops(net);
    }

    ++net.steps;
    net.accumulated_discarded_weight += discarded;
    net.max_intermediate = std::max(net.max_intermediate, probe.max_elements);
    net.max_bound_ratio = std::max(net.max_bound_ratio, static_cast<double>(probe.max_elements) / std::pow(chi_eff, 6));
    return net;
}

struct TrgResult {
    double value = 0.0;
    double accumulated_discarded_weight = 0.0;
    std::size_t steps = 0;
    std::size_t max_intermediate = 0;
    double max_bound_ratio = 0.0;
};

/// Coarse-grain until a single tensor remains, then close it to a scalar.
[[nodiscard]] inline TrgResult trg_contract(TrgNetwork net, std::size_t chi, std::size_t max_steps = 64,
                                            std::size_t threads = 1) {
    if (const auto bad = net.violations(); !bad.empty()) throw ShapeMismatch("invalid network: " + bad.front());
    while (net.rows * net.cols > 1) {
        if (net.steps >= max_steps) {
            throw NonConvergence("grid is still " + std::to_string(net.rows) + "x" + std::to_string(net.cols) +
                                 " after " + std::to_string(net.steps) + " steps");
        }
        net = trg_step(std::move(net), chi, threads);
    }
    detail::absorb_self_loops(net);
    const DenseTensor& last = net.tensors.front();
    if (last.size() != 1) throw ShapeMismatch("final tensor has open legs " + shape_string(last.shape()));
    return {last[0], net.accumulated_discarded_weight, net.steps, net.max_intermediate, net.max_bound_ratio};
}

// ---------------------------------------------------------------------------
// Applying a lattice to vectors

inline constexpr Label kBatchLabel = -1;

struct SweepOptions {
    std::size_t chi = SIZE_MAX;
    bool truncate = false;
    std::optional<std::size_t> hole; // site left out of the network (its legs stay open)
};

/// Row-by-row boundary sweep: absorb `seed`, then each site row-major (the
/// hole excepted), then each extra tensor. When truncation is enabled the
/// vertical bonds leaving a finished row are compressed to rank chi by
/// svd_truncate on the boundary state.
[[nodiscard]] inline LabeledTensor sweep_contract(const PepsLattice& l, LabeledTensor state,
                                                  const std::vector<LabeledTensor>& extra, const SweepOptions& opt,
                                                  double* discarded = nullptr) {
    const LatticeLabels lab{l.rows(), l.cols()};
    for (std::size_t r = 0; r < l.rows(); ++r) {
        for (std::size_t c = 0; c < l.cols(); ++c) {
            if (opt.hole && *opt.hole == l.spec.site_index(r, c)) continue;
            state = contract_labeled(state, labeled_site(l, r, c));
        }
        if (!opt.truncate || r + 1 == l.rows()) continue;
        std::vector<Label> frontier;
        std::size_t frontier_dim = 1;
        for (std::size_t c = 0; c < l.cols(); ++c) {
            const Label b = lab.vertical(r, c);
            if (opt.hole && *opt.hole == l.spec.site_index(r + 1, c)) continue;
            if (state.has(b)) {
                frontier.push_back(b);
                frontier_dim *= state.extent_of(b);
            }
        }
        if (frontier.empty() || frontier_dim <= opt.chi) continue;
        AxisList rows_axes, cols_axes;
        std::vector<Label> ordered;
        for (std::size_t k = 0; k < state.labels.size(); ++k) {
            if (std::find(frontier.begin(), frontier.end(), state.labels[k]) == frontier.end()) {
                rows_axes.push_back(k);
                ordered.push_back(state.labels[k]);
            }
        }
        for (Label b : frontier) cols_axes.push_back(state.axis_of(b));
        const DenseTensor m = matricize(state.tensor, rows_axes, cols_axes);
        const SvdResult svd = svd_truncate(m, opt.chi);
        if (discarded) *discarded += svd.discarded_weight;
        Shape shape;
        for (std::size_t a : rows_axes) shape.push_back(state.tensor.extent(a));
        for (std::size_t a : cols_axes) shape.push_back(state.tensor.extent(a));
        ordered.insert(ordered.end(), frontier.begin(), frontier.end());
        state = {reshape(svd.reconstruct(), shape), std::move(ordered)};
    }
    for (const auto& t : extra) state = contract_labeled(state, t);
    return state;
}

/// Peak boundary-state size of an exact row sweep for a batch of inputs.
[[nodiscard]] inline std::size_t sweep_peak_estimate(const PepsLattice& l, std::size_t batch) {
    std::size_t peak = 0;
    std::size_t in_rest = l.spec.pad_in, out_done = 1;
    for (std::size_t r = 0; r < l.rows(); ++r) {
        std::size_t frontier = 1;
        for (std::size_t c = 0; c < l.cols(); ++c) {
            const std::size_t s = l.spec.site_index(r, c);
            in_rest /= l.spec.in_factors[s];
            out_done *= l.spec.out_factors[s];
            frontier *= l.at(r, c).down();
        }
        peak = std::max(peak, batch * in_rest * out_done * frontier * std::max<std::size_t>(1, l.chi_max()));
    }
    return peak;
}

/// Zero-pad each row of `x` (batch x orig) to `padded` columns and split
/// the columns over the given per-site labels.
[[nodiscard]] inline LabeledTensor batch_seed(const DenseTensor& x, std::size_t padded,
                                              const std::vector<std::size_t>& factors,
                                              const std::vector<Label>& labels) {
    const std::size_t batch = x.extent(0), orig = x.extent(1);
    DenseTensor p({batch, padded});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < orig; ++j) p[b * padded + j] = x[b * orig + j];
    }
    Shape shape{batch};
    shape.insert(shape.end(), factors.begin(), factors.end());
    std::vector<Label> all{kBatchLabel};
    all.insert(all.end(), labels.begin(), labels.end());
    return {reshape(p, shape), std::move(all)};
}

struct ForwardOptions {
    std::size_t chi = SIZE_MAX;
    std::size_t oracle_budget = kDefaultOracleBudget;
};

/// y = W_lattice x for every row of `x` (batch x orig_in) -> (batch x orig_out).
[[nodiscard]] inline DenseTensor apply_lattice(const PepsLattice& l, const DenseTensor& x,
                                               const ForwardOptions& opt = {}) {
    if (x.order() != 2 || x.extent(1) != l.spec.orig_in) {
        throw ShapeMismatch("input " + shape_string(x.shape()) + " does not match orig_in " +
                            std::to_string(l.spec.orig_in));
    }
    const LatticeLabels lab{l.rows(), l.cols()};
    std::vector<Label> in_labels, out_labels{kBatchLabel};
    for (std::size_t s = 0; s < l.spec.sites(); ++s) {
        in_labels.push_back(lab.in(s));
        out_labels.push_back(lab.out(s));
    }
    const std::size_t batch = x.extent(0);
    SweepOptions sweep;
    sweep.chi = opt.chi;
    sweep.truncate = sweep_peak_estimate(l, batch) > opt.oracle_budget;
    const LabeledTensor y = sweep_contract(l, batch_seed(x, l.spec.pad_in, l.spec.in_factors, in_labels), {}, sweep);
    return crop(reshape(arrange(y, out_labels), {batch, l.spec.pad_out}), batch, l.spec.orig_out);
}

/// y = Contract(lattice, x) for a single vector of length orig_in.
[[nodiscard]] inline std::vector<double> contract_forward(const PepsLattice& l, std::span<const double> x,
                                                          const ForwardOptions& opt = {}) {
    if (x.size() != l.spec.orig_in) {
        throw ShapeMismatch("input length " + std::to_string(x.size()) + " != orig_in " +
                            std::to_string(l.spec.orig_in));
    }
    const DenseTensor y = apply_lattice(l, DenseTensor({1, x.size()}, {x.begin(), x.end()}), opt);
    return y.values();
}

[[nodiscard]] inline std::vector<double> contract_forward(const PepsLattice& l, std::span<const double> x,
                                                          std::size_t chi,
                                                          std::size_t oracle_budget = kDefaultOracleBudget) {
    return contract_forward(l, x, ForwardOptions{chi, oracle_budget});
}

} // namespace karipap
