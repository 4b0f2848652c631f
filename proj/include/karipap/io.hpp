#pragma once

#include "karipap/decompose.hpp"
#include "karipap/peps.hpp"
#include "karipap/toymodel.hpp"

#include "json.hpp"

#include <array>
#include <bit>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace karipap {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr std::uint32_t kTensorFormatVersion = 1;
inline constexpr std::array<char, 4> kTensorMagic{'K', 'T', 'N', 'S'};

enum class FileDtype : std::uint8_t { kF64 = 1, kF32 = 2 };

namespace detail {

template <class T> void put_le(std::vector<unsigned char>& out, T value) {
    for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<unsigned char>((value >> (8 * b)) & 0xff));
}

template <class T> T get_le(const unsigned char* p) {
    T v = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) v |= static_cast<T>(p[b]) << (8 * b);
    return v;
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw IoError("short write to " + path.string());
}

} // namespace detail

[[nodiscard]] inline std::vector<unsigned char> encode_tensor(const DenseTensor& t, FileDtype dtype = FileDtype::kF64) {
    if (t.order() > 255) throw ShapeMismatch("too many axes for the tensor format");
    std::vector<unsigned char> out(kTensorMagic.begin(), kTensorMagic.end());
    detail::put_le<std::uint32_t>(out, kTensorFormatVersion);
    out.push_back(static_cast<unsigned char>(dtype));
    out.push_back(static_cast<unsigned char>(t.order()));
    for (std::size_t e : t.shape()) detail::put_le<std::uint64_t>(out, e);
    for (double v : t.data()) {
        if (dtype == FileDtype::kF64) {
            detail::put_le(out, std::bit_cast<std::uint64_t>(v));
        } else {
            detail::put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        }
    }
    return out;
}

[[nodiscard]] inline DenseTensor decode_tensor(const std::vector<unsigned char>& bytes) {
    constexpr std::size_t kHeader = 4 + 4 + 1 + 1;
    if (bytes.size() < 4 || !std::equal(kTensorMagic.begin(), kTensorMagic.end(), bytes.begin())) {
        throw BadMagic("not a KTNS tensor file");
    }
    if (bytes.size() < kHeader) throw TruncatedPayload("header is incomplete");
    const auto version = detail::get_le<std::uint32_t>(&bytes[4]);
    if (version != kTensorFormatVersion) throw UnsupportedVersion("format version " + std::to_string(version));
    const unsigned dtype = bytes[8];
    if (dtype != 1 && dtype != 2) throw UnknownDtype("dtype code " + std::to_string(dtype));
    const std::size_t width = dtype == 1 ? 8 : 4;
    const std::size_t axes = bytes[9];
    if (bytes.size() < kHeader + 8 * axes) throw TruncatedPayload("extents are incomplete");
    Shape shape(axes);
    for (std::size_t a = 0; a < axes; ++a) shape[a] = detail::get_le<std::uint64_t>(&bytes[kHeader + 8 * a]);
    const std::size_t offset = kHeader + 8 * axes;
    const std::size_t count = element_count(shape);
    if (bytes.size() - offset != count * width) {
        throw TruncatedPayload("header declares " + std::to_string(count) + " values, payload holds " +
                               std::to_string((bytes.size() - offset) / width));
    }
    std::vector<double> values(count);
    for (std::size_t k = 0; k < count; ++k) {
        const unsigned char* p = &bytes[offset + k * width];
        values[k] = width == 8 ? std::bit_cast<double>(detail::get_le<std::uint64_t>(p))
                               : static_cast<double>(std::bit_cast<float>(detail::get_le<std::uint32_t>(p)));
    }
    return DenseTensor(std::move(shape), std::move(values));
}

inline void save_tensor(const DenseTensor& t, const std::filesystem::path& path, FileDtype dtype = FileDtype::kF64) {
    const auto bytes = encode_tensor(t, dtype);
    detail::write_file(path, bytes.data(), bytes.size());
}

[[nodiscard]] inline DenseTensor load_tensor(const std::filesystem::path& path) {
    return decode_tensor(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// JSON

/// Serialized with sorted keys and a trailing newline. Timing fields are
/// dropped when `timestamps` is false so repeated runs compare byte for byte.
[[nodiscard]] inline std::string dump_report(nlohmann::json j, bool timestamps) {
    if (!timestamps) {
        auto strip = [](auto&& self, nlohmann::json& node) -> void {
            if (node.is_object()) {
                node.erase("wall_time_seconds");
                node.erase("generated_at");
                for (auto& [k, v] : node.items()) self(self, v);
            } else if (node.is_array()) {
                for (auto& v : node) self(self, v);
            }
        };
        strip(strip, j);
    } else if (j.is_object()) {
        j["generated_at"] = std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
    }
    return j.dump(2) + "\n";
}

inline void write_report(const std::filesystem::path& path, const nlohmann::json& j, bool timestamps) {
    const std::string text = dump_report(j, timestamps);
    detail::write_file(path, text.data(), text.size());
}

[[nodiscard]] inline nlohmann::json read_json(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    auto j = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (j.is_discarded()) throw ConfigInvalid(path.string() + " is not valid JSON");
    return j;
}

inline void to_json(nlohmann::json& j, const GridSpec& s) {
    j = {{"rows", s.rows},         {"cols", s.cols},         {"out_factors", s.out_factors},
         {"in_factors", s.in_factors}, {"orig_out", s.orig_out}, {"orig_in", s.orig_in},
         {"pad_out", s.pad_out},   {"pad_in", s.pad_in}};
}

inline void from_json(const nlohmann::json& j, GridSpec& s) {
    j.at("rows").get_to(s.rows);
    j.at("cols").get_to(s.cols);
    j.at("out_factors").get_to(s.out_factors);
    j.at("in_factors").get_to(s.in_factors);
    j.at("orig_out").get_to(s.orig_out);
    j.at("orig_in").get_to(s.orig_in);
    j.at("pad_out").get_to(s.pad_out);
    j.at("pad_in").get_to(s.pad_in);
}

inline void to_json(nlohmann::json& j, const DecomposeReport& r) {
    j = {{"discarded_weights", r.discarded_weights},
         {"vertical_discarded_weights", r.vertical_discarded_weights},
         {"construction_error", r.construction_error},
         {"reconstruction_error", r.reconstruction_error},
         {"error_method", r.error_method},
         {"chi", r.chi},
         {"sweeps", r.sweeps},
         {"error_history", r.error_history},
         {"vertical_bonds_inserted", r.vertical_bonds_inserted},
         {"vertical_insertion_skipped", r.vertical_insertion_skipped},
         {"degenerate_cut", r.degenerate_cut},
         {"ridge_regularized", r.ridge_regularized}};
}

inline void to_json(nlohmann::json& j, const TrainReport& r) {
    j = {{"phase", r.phase},
         {"loss_curve", r.loss_curve},
         {"eval_loss", r.eval_loss},
         {"accuracy", r.accuracy},
         {"wall_time_seconds", r.wall_time_seconds},
         {"parameter_count", r.parameter_count},
         {"steps", r.steps}};
}

// ---------------------------------------------------------------------------
// Lattice directories: manifest.json plus one KTNS blob per site.

inline constexpr const char* kManifestName = "manifest.json";

[[nodiscard]] inline std::string site_file_name(std::size_t r, std::size_t c) {
    return "site_" + std::to_string(r) + "_" + std::to_string(c) + ".ktns";
}

inline void save_lattice(const PepsLattice& l, const DecomposeReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    nlohmann::json sites = nlohmann::json::array();
    for (std::size_t r = 0; r < l.rows(); ++r) {
        for (std::size_t c = 0; c < l.cols(); ++c) {
            const std::string name = site_file_name(r, c);
            save_tensor(l.at(r, c).data, dir / name);
            sites.push_back({{"row", r}, {"col", c}, {"file", name}, {"shape", l.at(r, c).data.shape()}});
        }
    }
    const nlohmann::json manifest = {{"format", "karipap-lattice"},
                                     {"tool_version", kToolVersion},
                                     {"grid_spec", l.spec},
                                     {"rows", l.rows()},
                                     {"cols", l.cols()},
                                     {"chi", report.chi},
                                     {"sites", sites},
                                     {"decompose_report", report}};
    write_report(dir / kManifestName, manifest, false);
}

/// Load and validate a lattice directory. Structural problems raise
/// ManifestInvalid; unreadable files raise the persistence errors.
[[nodiscard]] inline PepsLattice load_lattice(const std::filesystem::path& dir, nlohmann::json* manifest_out = nullptr) {
    const nlohmann::json m = read_json(dir / kManifestName);
    PepsLattice l;
    try {
        if (m.at("format") != "karipap-lattice") throw ManifestInvalid("unexpected format tag");
        l.spec = m.at("grid_spec").get<GridSpec>();
        if (m.at("rows").get<std::size_t>() != l.spec.rows || m.at("cols").get<std::size_t>() != l.spec.cols) {
            throw ManifestInvalid("rows/cols disagree with the grid spec");
        }
        const auto& sites = m.at("sites");
        if (sites.size() != l.spec.sites()) throw ManifestInvalid("site list has the wrong length");
        l.sites.resize(l.spec.sites());
        std::vector<bool> seen(l.spec.sites(), false);
        for (const auto& entry : sites) {
            const auto r = entry.at("row").get<std::size_t>(), c = entry.at("col").get<std::size_t>();
            if (r >= l.spec.rows || c >= l.spec.cols || seen[l.spec.site_index(r, c)]) {
                throw ManifestInvalid("bad or repeated site coordinates");
            }
            seen[l.spec.site_index(r, c)] = true;
            const auto path = dir / entry.at("file").get<std::string>();
            if (!std::filesystem::exists(path)) throw ManifestInvalid("missing site file " + path.string());
            DenseTensor t = load_tensor(path);
            if (t.shape() != entry.at("shape").get<Shape>()) {
                throw ManifestInvalid("site (" + std::to_string(r) + "," + std::to_string(c) +
                                      ") does not match its declared shape");
            }
            l.sites[l.spec.site_index(r, c)].data = std::move(t);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ManifestInvalid(std::string("malformed manifest: ") + e.what());
    }
    if (const auto v = validate_lattice(l); !v.passed()) {
        const auto& first = v.violations.front();
        throw ManifestInvalid(first.kind + " at (" + std::to_string(first.row) + "," + std::to_string(first.col) +
                              "): " + first.detail);
    }
    if (manifest_out) *manifest_out = m;
    return l;
}

// ---------------------------------------------------------------------------
// Toy configuration files

[[nodiscard]] inline ToyConfig toy_config_from_json(const nlohmann::json& j) {
    ToyConfig c;
    if (!j.is_object()) throw ConfigInvalid("config must be a JSON object");
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "vocab") value.get_to(c.vocab);
            else if (key == "width") value.get_to(c.width);
            else if (key == "seq_len") value.get_to(c.seq_len);
            else if (key == "hidden") value.get_to(c.hidden);
            else if (key == "task") c.task = parse_task(value.get<std::string>());
            else if (key == "seed") value.get_to(c.seed);
            else if (key == "step_size") value.get_to(c.step_size);
            else if (key == "steps") value.get_to(c.steps);
            else if (key == "batch") value.get_to(c.batch);
            else if (key == "eval_sequences") value.get_to(c.eval_sequences);
            else if (key == "grid_rows") value.get_to(c.grid_rows);
            else if (key == "grid_cols") value.get_to(c.grid_cols);
            else if (key == "tensorize_attention") value.get_to(c.tensorize_attention);
            else if (key == "heal_steps") value.get_to(c.heal_steps);
            else if (key == "target_fraction") value.get_to(c.target_fraction);
            else if (key == "als_sweeps") value.get_to(c.als_sweeps);
            else throw ConfigInvalid("unknown config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigInvalid(std::string("bad config value: ") + e.what());
    }
    c.validate();
    return c;
}

inline void to_json(nlohmann::json& j, const ToyConfig& c) {
    j = {{"vocab", c.vocab},
         {"width", c.width},
         {"seq_len", c.seq_len},
         {"hidden", c.hidden},
         {"task", task_name(c.task)},
         {"seed", c.seed},
         {"step_size", c.step_size},
         {"steps", c.steps},
         {"batch", c.batch},
         {"eval_sequences", c.eval_sequences},
         {"grid_rows", c.grid_rows},
         {"grid_cols", c.grid_cols},
         {"tensorize_attention", c.tensorize_attention},
         {"heal_steps", c.heal_steps},
         {"target_fraction", c.target_fraction},
         {"als_sweeps", c.als_sweeps}};
}

} // namespace karipap
