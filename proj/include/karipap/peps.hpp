#pragma once

#include "karipap/network.hpp"
#include "karipap/tensorize.hpp"

#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace karipap {

inline constexpr std::size_t kDefaultOracleBudget = std::size_t{1} << 24;

/// Axis layout of every site tensor: (out, in, up, down, left, right).
enum SiteAxis : std::size_t { kOut = 0, kIn = 1, kUp = 2, kDown = 3, kLeft = 4, kRight = 5 };

struct SiteTensor {
    DenseTensor data; // shape (o, i, up, down, left, right)

    SiteTensor() : data({1, 1, 1, 1, 1, 1}) {}
    explicit SiteTensor(DenseTensor t) : data(std::move(t)) {
        if (data.order() != 6) throw ShapeMismatch("site tensor must have 6 axes, got " + shape_string(data.shape()));
    }

    [[nodiscard]] std::size_t phys_out() const { return data.extent(kOut); }
    [[nodiscard]] std::size_t phys_in() const { return data.extent(kIn); }
    [[nodiscard]] std::size_t up() const { return data.extent(kUp); }
    [[nodiscard]] std::size_t down() const { return data.extent(kDown); }
    [[nodiscard]] std::size_t left() const { return data.extent(kLeft); }
    [[nodiscard]] std::size_t right() const { return data.extent(kRight); }

    friend bool operator==(const SiteTensor&, const SiteTensor&) = default;
};

/// Finite open-boundary PEPS: one site tensor per grid site, row-major.
struct PepsLattice {
    GridSpec spec;
    std::vector<SiteTensor> sites;

    [[nodiscard]] std::size_t rows() const noexcept { return spec.rows; }
    [[nodiscard]] std::size_t cols() const noexcept { return spec.cols; }
    [[nodiscard]] const SiteTensor& at(std::size_t r, std::size_t c) const { return sites.at(spec.site_index(r, c)); }
    [[nodiscard]] SiteTensor& at(std::size_t r, std::size_t c) { return sites.at(spec.site_index(r, c)); }

    [[nodiscard]] std::size_t chi_max() const {
        std::size_t chi = 1;
        for (const auto& s : sites) chi = std::max({chi, s.up(), s.down(), s.left(), s.right()});
        return chi;
    }

    friend bool operator==(const PepsLattice&, const PepsLattice&) = default;
};

struct Violation {
    std::string kind; // bond-mismatch | open-boundary | physical-dims | site-count | grid-spec
    std::size_t row = 0, col = 0;
    std::size_t other_row = 0, other_col = 0;
    std::string detail;
};

struct ValidationReport {
    std::vector<Violation> violations;
    [[nodiscard]] bool passed() const noexcept { return violations.empty(); }
};

[[nodiscard]] inline ValidationReport validate_lattice(const PepsLattice& l) {
    ValidationReport report;
    auto add = [&](std::string kind, std::size_t r, std::size_t c, std::size_t r2, std::size_t c2,
                   std::string detail) {
        report.violations.push_back({std::move(kind), r, c, r2, c2, std::move(detail)});
    };
    for (const auto& msg : l.spec.violations()) add("grid-spec", 0, 0, 0, 0, msg);
    if (l.sites.size() != l.rows() * l.cols()) {
        add("site-count", 0, 0, 0, 0,
            "expected " + std::to_string(l.rows() * l.cols()) + " sites, got " + std::to_string(l.sites.size()));
        return report;
    }
    const std::size_t R = l.rows(), C = l.cols();
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
            const SiteTensor& s = l.at(r, c);
            if (c + 1 < C && s.right() != l.at(r, c + 1).left()) {
                add("bond-mismatch", r, c, r, c + 1,
                    "right=" + std::to_string(s.right()) + " left=" + std::to_string(l.at(r, c + 1).left()));
            }
            if (r + 1 < R && s.down() != l.at(r + 1, c).up()) {
                add("bond-mismatch", r, c, r + 1, c,
                    "down=" + std::to_string(s.down()) + " up=" + std::to_string(l.at(r + 1, c).up()));
            }
            if (r == 0 && s.up() != 1) add("open-boundary", r, c, r, c, "top edge extent " + std::to_string(s.up()));
            if (r + 1 == R && s.down() != 1) {
                add("open-boundary", r, c, r, c, "bottom edge extent " + std::to_string(s.down()));
            }
            if (c == 0 && s.left() != 1) add("open-boundary", r, c, r, c, "left edge extent " + std::to_string(s.left()));
            if (c + 1 == C && s.right() != 1) {
                add("open-boundary", r, c, r, c, "right edge extent " + std::to_string(s.right()));
            }
            const std::size_t idx = l.spec.site_index(r, c);
            if (idx < l.spec.out_factors.size() &&
                (s.phys_out() != l.spec.out_factors[idx] || s.phys_in() != l.spec.in_factors[idx])) {
                add("physical-dims", r, c, r, c,
                    "site physical dims (" + std::to_string(s.phys_out()) + "," + std::to_string(s.phys_in()) +
                        ") differ from grid spec");
            }
        }
    }
    return report;
}

[[nodiscard]] inline std::size_t parameter_count(const PepsLattice& l) {
    std::size_t total = 0;
    for (const auto& s : l.sites) total += s.data.size();
    return total;
}

/// Deterministic uniform doubles on [-1, 1): mt19937_64 words mapped through
/// their top 53 bits, so the stream is identical on every platform.
class UniformStream {
public:
    explicit UniformStream(std::uint64_t seed) : engine_(seed) {}

    double next() {
        const double unit = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        return 2.0 * unit - 1.0;
    }

    void fill(DenseTensor& t) {
        for (double& v : t.data()) v = next();
    }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
};

/// Shape of the site at (r, c) when every interior bond has extent `chi`.
[[nodiscard]] inline Shape site_shape(const GridSpec& spec, std::size_t r, std::size_t c, std::size_t chi) {
    const std::size_t idx = spec.site_index(r, c);
    return {spec.out_factors[idx],
            spec.in_factors[idx],
            r > 0 ? chi : 1,
            r + 1 < spec.rows ? chi : 1,
            c > 0 ? chi : 1,
            c + 1 < spec.cols ? chi : 1};
}

[[nodiscard]] inline PepsLattice random_lattice(std::size_t rows, std::size_t cols, const GridSpec& spec,
                                                std::size_t chi, std::uint64_t seed) {
    if (rows != spec.rows || cols != spec.cols) throw ShapeMismatch("lattice dims differ from grid spec");
    if (chi == 0) throw ShapeMismatch("chi must be positive");
    PepsLattice l{spec, {}};
    UniformStream rng(seed);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            DenseTensor t(site_shape(spec, r, c, chi));
            rng.fill(t);
            l.sites.emplace_back(std::move(t));
        }
    }
    return l;
}

/// Bond labelling shared by every routine that wires a lattice as a network.
struct LatticeLabels {
    std::size_t rows, cols;

    [[nodiscard]] std::size_t n() const noexcept { return rows * cols; }
    [[nodiscard]] Label out(std::size_t s) const { return static_cast<Label>(s); }
    [[nodiscard]] Label in(std::size_t s) const { return static_cast<Label>(n() + s); }
    /// bond between (r,c) and (r,c+1)
    [[nodiscard]] Label horizontal(std::size_t r, std::size_t c) const {
        return static_cast<Label>(2 * n() + r * cols + c);
    }
    /// bond between (r,c) and (r+1,c)
    [[nodiscard]] Label vertical(std::size_t r, std::size_t c) const {
        return static_cast<Label>(3 * n() + r * cols + c);
    }
    [[nodiscard]] bool is_bond(Label l) const { return l >= static_cast<Label>(2 * n()) && l < static_cast<Label>(4 * n()); }
};

/// The site at (r, c) as a labeled tensor with its boundary (extent-1) legs
/// dropped. Physical legs are kept unless disabled.
[[nodiscard]] inline LabeledTensor labeled_site(const DenseTensor& data, const GridSpec& spec, std::size_t r,
                                                std::size_t c) {
    const LatticeLabels lab{spec.rows, spec.cols};
    const std::size_t s = spec.site_index(r, c);
    Shape shape{data.extent(kOut), data.extent(kIn)};
    std::vector<Label> labels{lab.out(s), lab.in(s)};
    if (r > 0) {
        shape.push_back(data.extent(kUp));
        labels.push_back(lab.vertical(r - 1, c));
    }
    if (r + 1 < spec.rows) {
        shape.push_back(data.extent(kDown));
        labels.push_back(lab.vertical(r, c));
    }
    if (c > 0) {
        shape.push_back(data.extent(kLeft));
        labels.push_back(lab.horizontal(r, c - 1));
    }
    if (c + 1 < spec.cols) {
        shape.push_back(data.extent(kRight));
        labels.push_back(lab.horizontal(r, c));
    }
    return {reshape(data, shape), std::move(labels)};
}

[[nodiscard]] inline LabeledTensor labeled_site(const PepsLattice& l, std::size_t r, std::size_t c) {
    return labeled_site(l.at(r, c).data, l.spec, r, c);
}

/// Inverse of labeled_site: bring a tensor carrying a site's labels back to
/// the (o, i, up, down, left, right) layout.
[[nodiscard]] inline DenseTensor unlabel_site(const LabeledTensor& t, const GridSpec& spec, std::size_t r,
                                              std::size_t c, const Shape& site_shape) {
    const LabeledTensor ref = labeled_site(DenseTensor(site_shape), spec, r, c);
    return reshape(arrange(t, ref.labels), site_shape);
}

[[nodiscard]] inline std::vector<Label> physical_labels(const GridSpec& spec) {
    const LatticeLabels lab{spec.rows, spec.cols};
    std::vector<Label> out;
    for (std::size_t s = 0; s < spec.sites(); ++s) out.push_back(lab.out(s));
    for (std::size_t s = 0; s < spec.sites(); ++s) out.push_back(lab.in(s));
    return out;
}

/// Exact contraction by pairwise elimination in the given site order
/// (row-major when empty). Returns the (pad_out x pad_in) matrix.
[[nodiscard]] inline DenseTensor contract_to_dense(const PepsLattice& l, std::vector<std::size_t> order = {}) {
    const std::size_t n = l.sites.size();
    if (order.empty()) {
        order.resize(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
    }
    if (!is_permutation_of_axes(order, n)) throw InvalidPermutation("elimination order is not a site permutation");
    LabeledTensor acc = labeled_site(l, order[0] / l.cols(), order[0] % l.cols());
    for (std::size_t k = 1; k < n; ++k) {
        acc = contract_labeled(acc, labeled_site(l, order[k] / l.cols(), order[k] % l.cols()));
    }
    return reshape(arrange(acc, physical_labels(l.spec)), {l.spec.pad_out, l.spec.pad_in});
}

[[nodiscard]] inline std::size_t bond_configuration_count(const PepsLattice& l) {
    std::size_t count = 1;
    for (std::size_t r = 0; r < l.rows(); ++r) {
        for (std::size_t c = 0; c < l.cols(); ++c) {
            if (c + 1 < l.cols()) count *= l.at(r, c).right();
            if (r + 1 < l.rows()) count *= l.at(r, c).down();
        }
    }
    return count;
}

/// Brute-force oracle: sum over every assignment of the virtual indices of
/// the Kronecker product of the sites' (out x in) slices.
[[nodiscard]] inline DenseTensor exact_contract_to_dense(const PepsLattice& l,
                                                         std::size_t budget = kDefaultOracleBudget) {
    const std::size_t R = l.rows(), C = l.cols(), n = R * C;
    const std::size_t configs = bond_configuration_count(l);
    if (configs > budget) {
        throw OracleBudgetExceeded(std::to_string(configs) + " bond configurations exceed budget " +
                                   std::to_string(budget));
    }
    // bonds enumerated as: horizontal (r,c)->(r,c+1) then vertical (r,c)->(r+1,c)
    std::vector<std::size_t> extents;
    std::vector<std::size_t> right_bond(n, SIZE_MAX), down_bond(n, SIZE_MAX);
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c + 1 < C; ++c) {
            right_bond[r * C + c] = extents.size();
            extents.push_back(l.at(r, c).right());
        }
    }
    for (std::size_t r = 0; r + 1 < R; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
            down_bond[r * C + c] = extents.size();
            extents.push_back(l.at(r, c).down());
        }
    }
    auto bond_value = [](const std::vector<std::size_t>& cfg, std::size_t b) { return b == SIZE_MAX ? 0 : cfg[b]; };

    const std::size_t P = l.spec.pad_out, Q = l.spec.pad_in;
    RowMatrix total = RowMatrix::Zero(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(Q));
    std::vector<std::size_t> cfg(extents.size(), 0);
    for (std::size_t iter = 0; iter < configs; ++iter) {
        RowMatrix kron = RowMatrix::Ones(1, 1);
        for (std::size_t r = 0; r < R; ++r) {
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t s = r * C + c;
                const SiteTensor& site = l.at(r, c);
                const std::size_t up = r > 0 ? bond_value(cfg, down_bond[s - C]) : 0;
                const std::size_t down = bond_value(cfg, down_bond[s]);
                const std::size_t left = c > 0 ? bond_value(cfg, right_bond[s - 1]) : 0;
                const std::size_t right = bond_value(cfg, right_bond[s]);
                const auto o = static_cast<Eigen::Index>(site.phys_out());
                const auto i = static_cast<Eigen::Index>(site.phys_in());
                RowMatrix slice(o, i);
                for (Eigen::Index a = 0; a < o; ++a) {
                    for (Eigen::Index b = 0; b < i; ++b) {
                        const std::size_t idx[6] = {static_cast<std::size_t>(a), static_cast<std::size_t>(b), up,
                                                    down, left, right};
                        slice(a, b) = site.data.at(std::span<const std::size_t>(idx, 6));
                    }
                }
                RowMatrix next(kron.rows() * o, kron.cols() * i);
                for (Eigen::Index x = 0; x < kron.rows(); ++x) {
                    for (Eigen::Index y = 0; y < kron.cols(); ++y) {
                        next.block(x * o, y * i, o, i) = kron(x, y) * slice;
                    }
                }
                kron = std::move(next);
            }
        }
        total += kron;
        for (std::size_t b = extents.size(); b-- > 0;) {
            if (++cfg[b] < extents[b]) break;
            cfg[b] = 0;
        }
    }
    return DenseTensor::from_matrix(total);
}

} // namespace karipap
