#pragma once

#include "karipap/bench.hpp"
#include "karipap/decompose.hpp"
#include "karipap/io.hpp"
#include "karipap/toymodel.hpp"
#include "karipap/trg.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace karipap {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

namespace detail {

inline std::pair<std::size_t, std::size_t> parse_grid(const std::string& text) {
    const auto x = text.find_first_of("xX");
    try {
        if (x == std::string::npos) throw std::invalid_argument("no separator");
        std::size_t used_r = 0, used_c = 0;
        const auto r = std::stoul(text.substr(0, x), &used_r);
        const auto c = std::stoul(text.substr(x + 1), &used_c);
        if (used_r != x || used_c != text.size() - x - 1 || r == 0 || c == 0) throw std::invalid_argument("bad");
        return {r, c};
    } catch (const std::logic_error&) {
        throw ConfigInvalid("grid must look like RxC, got '" + text + "'");
    }
}

// Flatten a JSON document into (path, scalar) pairs in key order.
inline void flatten(const nlohmann::json& j, const std::string& prefix,
                    std::vector<std::pair<std::string, std::string>>& out) {
    if (j.is_object()) {
        for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) flatten(j[i], prefix + "[" + std::to_string(i) + "]", out);
    } else {
        out.emplace_back(prefix, j.is_string() ? j.get<std::string>() : j.dump());
    }
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
}

inline int exit_code_for(const Error& e) {
    const std::string& k = e.kind();
    if (k == "IoError" || k == "BadMagic" || k == "UnsupportedVersion" || k == "TruncatedPayload") return kExitIo;
    return kExitValidation;
}

} // namespace detail

/// Entry point shared by the executable and the tests. args excludes argv[0].
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
    CLI::App app{"Tensor-network compression of weight matrices", "karipap"};
    app.require_subcommand(1);
    app.fallthrough();
    std::uint64_t seed = 0;
    std::size_t oracle_budget = kDefaultOracleBudget;
    std::size_t threads = 1;
    bool no_timestamp = false;
    app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();
    app.add_option("--oracle-budget", oracle_budget, "Largest dense/brute-force size attempted")->capture_default_str();
    app.add_option("--threads", threads, "Worker threads for TRG steps")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_flag("--no-timestamp", no_timestamp, "Omit timestamps and timings from reports");

    std::string input, out_path, lattice_dir, reference, report_path, config, suite, grid_text, csv_path, mode = "snake";
    std::size_t chi = 0, als_sweeps = 0, samples = 100;
    double tol = 0.0;

    auto* compress = app.add_subcommand("compress", "Decompose a weight matrix into a lattice directory");
    compress->add_option("--input", input, "Weight matrix (.ktns, order 2)")->required();
    compress->add_option("--grid", grid_text, "Lattice shape RxC")->required();
    compress->add_option("--chi", chi, "Bond dimension")->required()->check(CLI::PositiveNumber);
    compress->add_option("--tol", tol, "Relative singular value cutoff");
    compress->add_option("--als-sweeps", als_sweeps, "ALS refinement sweeps");
    compress->add_option("--mode", mode, "snake | random-als")->check(CLI::IsMember({"snake", "random-als"}));
    compress->add_option("--out", out_path, "Output directory")->required();

    auto* reconstruct = app.add_subcommand("reconstruct", "Contract a lattice back into a matrix");
    reconstruct->add_option("--lattice", lattice_dir, "Lattice directory")->required();
    reconstruct->add_option("--out", out_path, "Output matrix (.ktns)")->required();

    auto* eval = app.add_subcommand("eval", "Compare a lattice against its reference matrix");
    eval->add_option("--lattice", lattice_dir, "Lattice directory")->required();
    eval->add_option("--reference", reference, "Reference matrix (.ktns)")->required();
    eval->add_option("--report", report_path, "Report JSON")->required();
    eval->add_option("--samples", samples, "Random input vectors for forward agreement")->capture_default_str();

    auto* train_toy = app.add_subcommand("train-toy", "Dense training, compression and healing of the toy model");
    train_toy->add_option("--config", config, "Toy configuration JSON");
    train_toy->add_option("--out", out_path, "Report JSON")->required();

    auto* bench = app.add_subcommand("bench", "Run a benchmark suite");
    bench->add_option("--suite", suite, "table1 | baselines | trg-oracle")
        ->required()
        ->check(CLI::IsMember({"table1", "baselines", "trg-oracle"}));
    bench->add_option("--report", report_path, "Report JSON")->required();

    auto* report = app.add_subcommand("report", "Summarize a report JSON");
    report->add_option("--in", input, "Report JSON")->required();
    report->add_option("--csv", csv_path, "Also write path,value rows to this CSV file");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitValidation;
    }

    const bool timestamps = !no_timestamp;
    try {
        if (*compress) {
            const auto [rows, cols] = detail::parse_grid(grid_text);
            const DenseTensor w = load_tensor(input);
            if (w.order() != 2) throw ShapeMismatch("input must be a matrix, got " + shape_string(w.shape()));
            const GridSpec spec = make_grid_spec(w.extent(0), w.extent(1), rows, cols);
            DecomposeOptions opt;
            opt.oracle_budget = oracle_budget;
            opt.seed = seed;
            if (mode == "random-als") opt.mode = DecomposeMode::kRandomAls;
            auto [lattice, rep] = decompose_weight(w, spec, chi, tol, opt);
            if (als_sweeps > 0) std::tie(lattice, rep) = als_refine(std::move(lattice), w, als_sweeps, tol, opt, rep);
            save_lattice(lattice, rep, out_path);
            nlohmann::json j = {{"command", "compress"},
                                {"input", input},
                                {"grid", {rows, cols}},
                                {"chi", chi},
                                {"tol", tol},
                                {"mode", mode},
                                {"original_params", w.size()},
                                {"compressed_params", parameter_count(lattice)},
                                {"decompose_report", rep}};
            write_report(std::filesystem::path(out_path) / "report.json", j, timestamps);
            out << "compressed " << shape_string(w.shape()) << " onto " << rows << "x" << cols
                << " lattice, relative error " << rep.reconstruction_error << "\n";
        } else if (*reconstruct) {
            const PepsLattice l = load_lattice(lattice_dir);
            const DenseTensor w_hat = crop(contract_to_dense(l), l.spec.orig_out, l.spec.orig_in);
            save_tensor(w_hat, out_path);
            out << "wrote " << shape_string(w_hat.shape()) << " to " << out_path << "\n";
        } else if (*eval) {
            const PepsLattice l = load_lattice(lattice_dir);
            const DenseTensor w = load_tensor(reference);
            if (w.order() != 2 || w.extent(0) != l.spec.orig_out || w.extent(1) != l.spec.orig_in) {
                throw ShapeMismatch("reference " + shape_string(w.shape()) + " does not match the lattice");
            }
            const DenseTensor w_hat = crop(contract_to_dense(l), l.spec.orig_out, l.spec.orig_in);
            UniformStream rng(seed);
            double worst = 0.0;
            for (std::size_t k = 0; k < samples; ++k) {
                std::vector<double> x(w.extent(1));
                for (double& v : x) v = rng.next();
                const auto y = contract_forward(l, x, SIZE_MAX, oracle_budget);
                const Eigen::VectorXd ref = w.as_matrix() * Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
                const double diff = (Eigen::Map<const Eigen::VectorXd>(y.data(), y.size()) - ref).norm();
                worst = std::max(worst, ref.norm() > 0.0 ? diff / ref.norm() : diff);
            }
            nlohmann::json j = {{"command", "eval"},
                                {"reconstruction_error", relative_error(w_hat, w)},
                                {"forward_max_relative_error", worst},
                                {"forward_samples", samples},
                                {"seed", seed},
                                {"original_params", w.size()},
                                {"compressed_params", parameter_count(l)},
                                {"chi_max", l.chi_max()},
                                {"valid", validate_lattice(l).passed()}};
            write_report(report_path, j, timestamps);
            out << "relative error " << j["reconstruction_error"].get<double>() << ", forward " << worst << "\n";
        } else if (*train_toy) {
            ToyConfig cfg = config.empty() ? ToyConfig{} : toy_config_from_json(read_json(config));
            if (app.count("--seed") > 0) cfg.seed = seed;
            ToyModel dense = build_toy_model(cfg);
            const TrainReport dense_report = train(dense, cfg.steps, "dense");
            const std::size_t chosen = chi_for_fraction(dense, cfg.target_fraction);
            const HealResult healed = compress_and_heal(dense, chosen, cfg.heal_steps);
            nlohmann::json entanglement = nlohmann::json::object();
            for (const auto& [name, lin] : {std::pair<std::string, const ToyLinear*>{"mlp_in", &dense.w1},
                                            std::pair<std::string, const ToyLinear*>{"mlp_out", &dense.w2}}) {
                const GridSpec spec = make_grid_spec(lin->out, lin->in, cfg.grid_rows, cfg.grid_cols);
                nlohmann::json cuts = nlohmann::json::array();
                for (const auto& c : entanglement_profile(lin->weight, spec)) {
                    cuts.push_back({{"cut", c.cut}, {"entropy", c.entropy}, {"effective_rank", c.effective_rank}});
                }
                entanglement[name] = cuts;
            }
            nlohmann::json j = {
                {"command", "train-toy"},
                {"config", cfg},
                {"dense", dense_report},
                {"compressed", healed.pre_heal},
                {"healed", healed.post_heal},
                {"chi", chosen},
                {"dense_mlp_parameters", healed.dense_mlp_parameters},
                {"compressed_mlp_parameters", healed.compressed_mlp_parameters},
                {"mlp_fraction", static_cast<double>(healed.compressed_mlp_parameters) /
                                     static_cast<double>(healed.dense_mlp_parameters)},
                {"accuracy_gap_points", 100.0 * (dense_report.accuracy - healed.post_heal.accuracy)},
                {"entanglement", entanglement}};
            write_report(out_path, j, timestamps);
            out << "dense " << dense_report.accuracy << ", compressed " << healed.pre_heal.accuracy << ", healed "
                << healed.post_heal.accuracy << " (chi " << chosen << ")\n";
        } else if (*bench) {
            nlohmann::json j;
            if (suite == "table1") j = table1_suite();
            if (suite == "baselines") j = baselines_suite(seed, 64, 64, timestamps);
            if (suite == "trg-oracle") j = trg_oracle_suite(seed, threads, oracle_budget, timestamps);
            write_report(report_path, j, timestamps);
            out << "suite " << suite << (j.value("pass", true) ? " passed" : " FAILED") << "\n";
            if (!j.value("pass", true)) return kExitValidation;
        } else if (*report) {
            const nlohmann::json j = read_json(input);
            std::vector<std::pair<std::string, std::string>> rows;
            detail::flatten(j, "", rows);
            for (const auto& [k, v] : rows) out << k << ": " << v << "\n";
            if (!csv_path.empty()) {
                std::ostringstream csv;
                csv << "path,value\n";
                for (const auto& [k, v] : rows) csv << detail::csv_field(k) << "," << detail::csv_field(v) << "\n";
                const std::string text = csv.str();
                detail::write_file(csv_path, text.data(), text.size());
            }
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return detail::exit_code_for(e);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitOk;
}

} // namespace karipap
