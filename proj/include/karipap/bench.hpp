#pragma once

#include "karipap/decompose.hpp"
#include "karipap/svd.hpp"
#include "karipap/trg.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace karipap {

enum class Dtype { kF32, kF16, kI8, kI4, kMixed };

[[nodiscard]] inline Dtype parse_dtype(const std::string& name) {
    if (name == "f32") return Dtype::kF32;
    if (name == "f16") return Dtype::kF16;
    if (name == "i8") return Dtype::kI8;
    if (name == "i4") return Dtype::kI4;
    if (name == "mixed") return Dtype::kMixed;
    throw UnknownDtype("'" + name + "'");
}

[[nodiscard]] inline std::string dtype_name(Dtype d) {
    switch (d) {
    case Dtype::kF32: return "f32";
    case Dtype::kF16: return "f16";
    case Dtype::kI8: return "i8";
    case Dtype::kI4: return "i4";
    case Dtype::kMixed: return "mixed";
    }
    return "f32";
}

/// Storage cost in bytes. `mixed` blends f16 (fraction f16_fraction of the
/// parameters) with i4 for the rest.
[[nodiscard]] inline double table1_accounting(double params, Dtype dtype, std::optional<double> f16_fraction = {}) {
    if (!(params >= 0.0)) throw ConfigInvalid("parameter count must be non-negative");
    switch (dtype) {
    case Dtype::kF32: return params * 4.0;
    case Dtype::kF16: return params * 2.0;
    case Dtype::kI8: return params * 1.0;
    case Dtype::kI4: return params * 0.5;
    case Dtype::kMixed:
        if (!f16_fraction || *f16_fraction < 0.0 || *f16_fraction > 1.0) {
            throw ConfigInvalid("mixed dtype needs an f16 fraction in [0, 1]");
        }
        return params * (2.0 * *f16_fraction + 0.5 * (1.0 - *f16_fraction));
    }
    throw UnknownDtype("unhandled dtype");
}

[[nodiscard]] inline double table1_accounting(double params, const std::string& dtype,
                                              std::optional<double> f16_fraction = {}) {
    return table1_accounting(params, parse_dtype(dtype), f16_fraction);
}

/// The f16 fraction f with params * (2f + 0.5(1 - f)) == target_bytes.
[[nodiscard]] inline double solve_mixed_split(double params, double target_bytes) {
    if (!(params > 0.0)) throw ConfigInvalid("parameter count must be positive");
    const double f = (target_bytes / params - 0.5) / 1.5;
    if (f < 0.0 || f > 1.0) throw ConfigInvalid("target bytes not reachable with an f16/i4 blend");
    return f;
}

struct CompressionReport {
    std::string method;
    std::string dtype = "f32";
    double original_params = 0.0;
    double compressed_params = 0.0;
    double original_bytes = 0.0;
    double compressed_bytes = 0.0;
    double compression_percent = 0.0; // 1 - compressed/original bytes
    double reconstruction_error = 0.0;
    double forward_error = 0.0;
    double wall_time_seconds = 0.0;
    bool no_compression = false;

    void finish() {
        compression_percent = original_bytes > 0.0 ? 1.0 - compressed_bytes / original_bytes : 0.0;
        no_compression = compression_percent <= 0.0;
    }
};

inline void to_json(nlohmann::json& j, const CompressionReport& r) {
    j = {{"method", r.method},
         {"dtype", r.dtype},
         {"original_params", r.original_params},
         {"compressed_params", r.compressed_params},
         {"original_bytes", r.original_bytes},
         {"compressed_bytes", r.compressed_bytes},
         {"compression_percent", r.compression_percent},
         {"reconstruction_error", r.reconstruction_error},
         {"forward_error", r.forward_error},
         {"wall_time_seconds", r.wall_time_seconds},
         {"no_compression", r.no_compression}};
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Relative error of W_hat x against W x over `samples` seeded vectors.
inline double forward_agreement(const DenseTensor& w, const DenseTensor& w_hat, std::size_t samples, std::uint64_t seed) {
    UniformStream rng(seed);
    DenseTensor x({w.extent(1), samples});
    rng.fill(x);
    const RowMatrix ref = w.as_matrix() * x.as_matrix();
    const RowMatrix got = w_hat.as_matrix() * x.as_matrix();
    const double norm = ref.norm();
    return norm > 0.0 ? (got - ref).norm() / norm : (got - ref).norm();
}

} // namespace detail

/// Rank-r truncated SVD stored as U, s, V at f32.
[[nodiscard]] inline std::pair<SvdResult, CompressionReport> svd_baseline(const DenseTensor& w, std::size_t rank) {
    if (rank == 0) throw ShapeMismatch("rank must be at least 1");
    const auto start = std::chrono::steady_clock::now();
    SvdResult f = svd_truncate(w, rank);
    CompressionReport r;
    r.method = "svd-rank-" + std::to_string(rank);
    const double m = static_cast<double>(w.extent(0)), n = static_cast<double>(w.extent(1));
    r.original_params = m * n;
    r.compressed_params = static_cast<double>(rank) * (m + n + 1.0);
    r.original_bytes = table1_accounting(r.original_params, Dtype::kF32);
    r.compressed_bytes = table1_accounting(r.compressed_params, Dtype::kF32);
    const DenseTensor w_hat = f.reconstruct();
    r.reconstruction_error = relative_error(w_hat, w);
    r.forward_error = detail::forward_agreement(w, w_hat, 16, 0);
    r.wall_time_seconds = detail::seconds_since(start);
    r.finish();
    return {std::move(f), r};
}

[[nodiscard]] inline double quantized_bytes(double params, int bits) {
    if (bits != 8 && bits != 4) throw UnknownDtype("quantization supports 8 or 4 bits");
    return params * bits / 8.0;
}

/// Symmetric per-matrix quantization, simulated: returns the dequantized
/// matrix and the storage it would take.
[[nodiscard]] inline std::pair<DenseTensor, CompressionReport> quant_baseline(const DenseTensor& w, int bits) {
    const auto start = std::chrono::steady_clock::now();
    CompressionReport r;
    r.method = "int" + std::to_string(bits);
    r.dtype = bits == 8 ? "i8" : "i4";
    r.original_params = r.compressed_params = static_cast<double>(w.size());
    r.original_bytes = table1_accounting(r.original_params, Dtype::kF32);
    r.compressed_bytes = quantized_bytes(r.compressed_params, bits);
    const double qmax = static_cast<double>((1 << (bits - 1)) - 1);
    double amax = 0.0;
    for (double v : w.data()) amax = std::max(amax, std::abs(v));
    DenseTensor q = w;
    if (amax > 0.0) {
        const double scale = amax / qmax;
        for (double& v : q.data()) v = std::clamp(std::nearbyint(v / scale), -qmax, qmax) * scale;
    }
    r.reconstruction_error = w.squared_norm() > 0.0 ? relative_error(q, w) : 0.0;
    r.forward_error = w.squared_norm() > 0.0 ? detail::forward_agreement(w, q, 16, 0) : 0.0;
    r.wall_time_seconds = detail::seconds_since(start);
    r.finish();
    return {std::move(q), r};
}

/// Decompose at chi and report storage at `dtype` against a dense f32 matrix.
[[nodiscard]] inline CompressionReport karipap_report(const DenseTensor& w, const GridSpec& spec, std::size_t chi,
                                                      Dtype dtype = Dtype::kF32,
                                                      std::optional<double> f16_fraction = {}) {
    const auto start = std::chrono::steady_clock::now();
    auto [lattice, rep] = decompose_weight(w, spec, chi);
    CompressionReport r;
    r.method = "karipap-chi-" + std::to_string(chi);
    r.dtype = dtype_name(dtype);
    r.original_params = static_cast<double>(w.size());
    r.compressed_params = static_cast<double>(parameter_count(lattice));
    r.original_bytes = table1_accounting(r.original_params, Dtype::kF32);
    r.compressed_bytes = table1_accounting(r.compressed_params, dtype, f16_fraction);
    const DenseTensor w_hat = crop(contract_to_dense(lattice), spec.orig_out, spec.orig_in);
    r.reconstruction_error = relative_error(w_hat, w);
    r.forward_error = detail::forward_agreement(w, w_hat, 16, 0);
    r.wall_time_seconds = detail::seconds_since(start);
    r.finish();
    return r;
}

struct CutEntropy {
    std::string cut;
    double entropy = 0.0;
    double effective_rank = 1.0;
    std::vector<double> spectrum;
};

/// H = -sum p ln p with p_i = s_i^2 / sum s^2.
[[nodiscard]] inline double spectrum_entropy(std::span<const double> sigma) {
    double total = 0.0;
    for (double s : sigma) total += s * s;
    if (total <= 0.0) return 0.0;
    double h = 0.0;
    for (double s : sigma) {
        const double p = s * s / total;
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

/// Entropy of the matrix cut (rows | columns), then of every cut along
/// the snake path of the grid tensor.
[[nodiscard]] inline std::vector<CutEntropy> entanglement_profile(const DenseTensor& w, const GridSpec& spec) {
    if (const auto bad = spec.violations(); !bad.empty()) throw ShapeMismatch("invalid grid spec: " + bad.front());
    std::vector<CutEntropy> out;
    auto push = [&](std::string name, const DenseTensor& m) {
        CutEntropy c{std::move(name), 0.0, 1.0, singular_values(m)};
        c.entropy = spectrum_entropy(c.spectrum);
        c.effective_rank = std::exp(c.entropy);
        out.push_back(std::move(c));
    };
    push("out|in", w);
    const DenseTensor grid = weight_to_grid_tensor(w, spec);
    const auto path = snake_path(spec.rows, spec.cols);
    AxisList rows, cols;
    for (std::size_t k = 1; k < path.size(); ++k) {
        rows.clear();
        cols.clear();
        for (std::size_t j = 0; j < path.size(); ++j) {
            const std::size_t s = spec.site_index(path[j].first, path[j].second);
            AxisList& side = j < k ? rows : cols;
            side.push_back(2 * s);
            side.push_back(2 * s + 1);
        }
        push("snake-" + std::to_string(k), matricize(grid, rows, cols));
    }
    return out;
}

/// Reference sizes from the published memory table, in GB (1e9 bytes).
struct Table1Row {
    std::string label;
    double params;
    Dtype dtype;
    double published_gb;
    double tolerance; // relative
};

inline constexpr double kSevenBModelParams = 6.74e9;
inline constexpr double kNominalSevenB = 7e9;
inline constexpr double kCompressedParams = 2.1e9;

[[nodiscard]] inline std::vector<Table1Row> table1_rows() {
    return {{"original", kSevenBModelParams, Dtype::kF32, 27.1, 0.01},
            {"8-bit", kSevenBModelParams, Dtype::kI8, 6.8, 0.01},
            {"4-bit", kSevenBModelParams, Dtype::kI4, 3.4, 0.01},
            {"88%", kCompressedParams, Dtype::kF16, 4.1, 0.03}};
}

[[nodiscard]] inline nlohmann::json table1_suite() {
    nlohmann::json rows = nlohmann::json::array();
    bool all = true;
    for (const auto& row : table1_rows()) {
        const double gb = table1_accounting(row.params, row.dtype) / 1e9;
        const double rel = std::abs(gb - row.published_gb) / row.published_gb;
        const bool pass = rel <= row.tolerance;
        all = all && pass;
        rows.push_back({{"label", row.label},
                        {"params", row.params},
                        {"dtype", dtype_name(row.dtype)},
                        {"computed_gb", gb},
                        {"published_gb", row.published_gb},
                        {"relative_difference", rel},
                        {"tolerance", row.tolerance},
                        {"pass", pass}});
    }
    const double target = 2.1e9;
    const double f = solve_mixed_split(kCompressedParams, target);
    const double mixed_gb = table1_accounting(kCompressedParams, Dtype::kMixed, f) / 1e9;
    const bool mixed_pass = std::abs(mixed_gb - 2.1) <= 1e-12 * 2.1;
    all = all && mixed_pass;
    rows.push_back({{"label", "93%"},
                    {"params", kCompressedParams},
                    {"dtype", "mixed"},
                    {"f16_fraction", f},
                    {"bits_per_param", 8.0 * target / kCompressedParams},
                    {"computed_gb", mixed_gb},
                    {"published_gb", 2.1},
                    {"relative_difference", std::abs(mixed_gb - 2.1) / 2.1},
                    {"tolerance", 1e-12},
                    {"pass", mixed_pass}});

    const double original_gb = table1_accounting(kSevenBModelParams, Dtype::kF32) / 1e9;
    const double memory_reduction = 1.0 - 2.1 / 27.1;
    const double param_reduction = (kNominalSevenB - kCompressedParams) / kNominalSevenB;
    const bool memory_pass = std::abs(memory_reduction - 0.93) <= 0.01;
    const bool param_pass = std::abs(param_reduction - 0.70) <= 1e-12;
    all = all && memory_pass && param_pass;
    return {{"suite", "table1"},
            {"rows", rows},
            {"percentages",
             {{"memory_reduction_published_sizes", memory_reduction},
              {"memory_reduction_computed_sizes", 1.0 - mixed_gb / original_gb},
              {"memory_reduction_label", 0.93},
              {"memory_reduction_pass", memory_pass},
              {"f16_row_memory_reduction", 1.0 - 4.1 / 27.1},
              {"parameter_reduction", param_reduction},
              {"parameter_reduction_label", 0.70},
              {"parameter_reduction_pass", param_pass}}},
            {"pass", all}};
}

/// SVD, quantization and lattice compression of one seeded random matrix.
[[nodiscard]] inline nlohmann::json baselines_suite(std::uint64_t seed, std::size_t m = 64, std::size_t n = 64,
                                                    bool timings = true) {
    UniformStream rng(seed);
    DenseTensor w({m, n});
    rng.fill(w);
    std::vector<CompressionReport> reports;
    for (std::size_t rank : {4, 16, 64}) reports.push_back(svd_baseline(w, rank).second);
    for (int bits : {8, 4}) reports.push_back(quant_baseline(w, bits).second);
    const GridSpec spec = make_grid_spec(m, n, 2, 2);
    for (std::size_t chi : {2, 4, 8}) reports.push_back(karipap_report(w, spec, chi));
    nlohmann::json rows = nlohmann::json::array();
    for (auto& r : reports) {
        if (!timings) r.wall_time_seconds = 0.0;
        rows.push_back(r);
    }
    nlohmann::json profile = nlohmann::json::array();
    for (const auto& c : entanglement_profile(w, spec)) {
        profile.push_back({{"cut", c.cut}, {"entropy", c.entropy}, {"effective_rank", c.effective_rank}});
    }
    return {{"suite", "baselines"}, {"seed", seed}, {"shape", {m, n}}, {"reports", rows}, {"entanglement", profile}};
}

/// TRG against brute force on seeded random networks.
[[nodiscard]] inline nlohmann::json trg_oracle_suite(std::uint64_t seed, std::size_t threads = 1,
                                                     std::size_t budget = kDefaultOracleBudget, bool timings = true) {
    nlohmann::json rows = nlohmann::json::array();
    bool all = true;
    double worst_ratio = 0.0;
    const auto start = std::chrono::steady_clock::now();
    struct Case {
        std::size_t rows, cols, count;
    };
    std::uint64_t next_seed = seed;
    for (const Case c : {Case{2, 2, 20}, Case{4, 4, 5}}) {
        for (std::size_t k = 0; k < c.count; ++k) {
            const TrgNetwork net = random_network(c.rows, c.cols, 2, next_seed++);
            const double exact = brute_force_contract(net, budget);
            const TrgResult r = trg_contract(net, 16, 64, threads);
            const double rel = std::abs(r.value - exact) / std::max(std::abs(exact), 1e-300);
            const bool pass = rel <= 1e-8 && r.max_bound_ratio <= kIntermediateBoundConstant;
            all = all && pass;
            worst_ratio = std::max(worst_ratio, r.max_bound_ratio);
            rows.push_back({{"grid", std::to_string(c.rows) + "x" + std::to_string(c.cols)},
                            {"seed", next_seed - 1},
                            {"exact", exact},
                            {"trg", r.value},
                            {"relative_error", rel},
                            {"max_intermediate", r.max_intermediate},
                            {"bound_ratio", r.max_bound_ratio},
                            {"pass", pass}});
        }
    }
    nlohmann::json out = {{"suite", "trg-oracle"},
                          {"chi", 16},
                          {"bound_constant", kIntermediateBoundConstant},
                          {"worst_bound_ratio", worst_ratio},
                          {"cases", rows},
                          {"pass", all}};
    if (timings) out["wall_time_seconds"] = detail::seconds_since(start);
    return out;
}

} // namespace karipap
