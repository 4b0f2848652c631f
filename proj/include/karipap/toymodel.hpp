#pragma once

#include "karipap/decompose.hpp"
#include "karipap/layer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

namespace karipap {

enum class ToyTask { kCopy, kReverse, kModularAdd };

[[nodiscard]] inline std::string task_name(ToyTask t) {
    switch (t) {
    case ToyTask::kCopy: return "copy";
    case ToyTask::kReverse: return "reverse";
    case ToyTask::kModularAdd: return "modular-add";
    }
    return "copy";
}

[[nodiscard]] inline ToyTask parse_task(const std::string& name) {
    if (name == "copy") return ToyTask::kCopy;
    if (name == "reverse") return ToyTask::kReverse;
    if (name == "modular-add") return ToyTask::kModularAdd;
    throw ConfigInvalid("unknown task '" + name + "'");
}

struct ToyConfig {
    std::size_t vocab = 16;
    std::size_t width = 16;
    std::size_t seq_len = 8;
    std::size_t hidden = 64;
    ToyTask task = ToyTask::kCopy;
    std::uint64_t seed = 0;
    double step_size = 1e-2;
    std::size_t steps = 300;
    std::size_t batch = 32;
    std::size_t eval_sequences = 256;
    std::size_t grid_rows = 2;
    std::size_t grid_cols = 2;
    bool tensorize_attention = false;
    std::size_t heal_steps = 100;
    double target_fraction = 0.3; // compressed MLP params / dense MLP params
    std::size_t als_sweeps = 0;

    void validate() const {
        if (vocab == 0 || width == 0 || seq_len == 0 || hidden == 0 || batch == 0 || eval_sequences == 0) {
            throw ConfigInvalid("sizes must be positive");
        }
        if (grid_rows == 0 || grid_cols == 0) throw ConfigInvalid("grid must have at least one site");
        if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigInvalid("step_size must be positive");
        if (!(target_fraction > 0.0) || target_fraction > 1.0) throw ConfigInvalid("target_fraction must be in (0, 1]");
        for (auto [o, i] : {std::pair{hidden, width}, std::pair{width, hidden}}) {
            if (!make_grid_spec(o, i, grid_rows, grid_cols).violations().empty()) {
                throw ConfigInvalid("MLP shape cannot be tensorized on the requested grid");
            }
        }
    }
};

/// Linear map y = W x + b whose W is either a plain matrix or a lattice.
struct ToyLinear {
    DenseTensor weight; // (out x in); unused once tensorized
    std::optional<TensorizedLinear> tensorized;
    DenseTensor bias;   // (out) when use_bias
    bool use_bias = false;
    std::size_t out = 0;
    std::size_t in = 0;

    [[nodiscard]] bool has_bias() const noexcept { return use_bias; }
    [[nodiscard]] std::size_t parameter_count() const {
        return (tensorized ? tensorized->parameter_count() : weight.size()) + (has_bias() ? out : 0);
    }

    /// Dense matrix currently represented.
    [[nodiscard]] DenseTensor matrix() const {
        if (!tensorized) return weight;
        const auto& spec = tensorized->lattice.spec;
        return crop(contract_to_dense(tensorized->lattice), spec.orig_out, spec.orig_in);
    }

    [[nodiscard]] RowMatrix forward(const RowMatrix& x) const {
        RowMatrix y;
        if (tensorized) {
            y = apply_lattice(tensorized->lattice, DenseTensor::from_matrix(x),
                              ForwardOptions{tensorized->chi_forward, tensorized->oracle_budget})
                    .as_matrix();
        } else {
            y = x * weight.as_matrix().transpose();
        }
        if (has_bias()) y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), out);
        return y;
    }

    /// Accumulates parameter gradients into `grad` and returns dL/dx.
    RowMatrix backward(const RowMatrix& x, const RowMatrix& dy, ToyLinear& grad) const {
        if (has_bias()) {
            Eigen::Map<Eigen::RowVectorXd>(grad.bias.data().data(), out) += dy.colwise().sum();
        }
        if (!tensorized) {
            grad.weight.as_matrix() += dy.transpose() * x;
            return dy * weight.as_matrix();
        }
        const ForwardCache cache{DenseTensor::from_matrix(x)};
        LayerGradients g = karipap::backward(*tensorized, cache, DenseTensor::from_matrix(dy));
        auto& sites = grad.tensorized->lattice.sites;
        for (std::size_t s = 0; s < sites.size(); ++s) sites[s].data += g.site_grads[s];
        return g.grad_x.as_matrix();
    }
};

struct ToyModel {
    ToyConfig cfg;
    DenseTensor embed;      // (vocab x width)
    DenseTensor positional; // (seq_len x width)
    ToyLinear wq, wk, wv, wo;
    ToyLinear w1, w2;       // MLP: width -> hidden -> width
    ToyLinear head;         // width -> vocab

    template <class F> void for_each_param(F&& f) {
        f(embed);
        f(positional);
        for (ToyLinear* lin : {&wq, &wk, &wv, &wo, &w1, &w2, &head}) {
            if (lin->tensorized) {
                for (auto& site : lin->tensorized->lattice.sites) f(site.data);
            } else {
                f(lin->weight);
            }
            if (lin->has_bias()) f(lin->bias);
        }
    }

    [[nodiscard]] std::size_t parameter_count() const {
        std::size_t n = embed.size() + positional.size();
        for (const ToyLinear* lin : {&wq, &wk, &wv, &wo, &w1, &w2, &head}) n += lin->parameter_count();
        return n;
    }

    [[nodiscard]] std::size_t mlp_weight_count() const {
        auto weights = [](const ToyLinear& l) { return l.tensorized ? l.tensorized->parameter_count() : l.weight.size(); };
        return weights(w1) + weights(w2);
    }

    [[nodiscard]] bool is_compressed() const noexcept { return w1.tensorized.has_value(); }
};

namespace detail {

inline ToyLinear make_linear(std::size_t out, std::size_t in, bool bias, UniformStream& rng) {
    ToyLinear l;
    l.out = out;
    l.in = in;
    l.weight = DenseTensor({out, in});
    const double scale = std::sqrt(3.0 / static_cast<double>(in));
    for (double& v : l.weight.data()) v = scale * rng.next();
    l.use_bias = bias;
    if (bias) l.bias = DenseTensor({out});
    return l;
}

inline ToyModel zeros_like(ToyModel m) {
    m.for_each_param([](DenseTensor& t) { std::fill(t.data().begin(), t.data().end(), 0.0); });
    return m;
}

} // namespace detail

/// Closed form of ToyModel::parameter_count for a dense model.
[[nodiscard]] inline std::size_t dense_parameter_count(const ToyConfig& c) {
    return c.vocab * c.width + c.seq_len * c.width + 4 * c.width * c.width + (c.hidden * c.width + c.hidden) +
           (c.width * c.hidden + c.width) + (c.vocab * c.width + c.vocab);
}

[[nodiscard]] inline ToyModel build_toy_model(const ToyConfig& cfg) {
    cfg.validate();
    UniformStream rng(cfg.seed);
    ToyModel m;
    m.cfg = cfg;
    m.embed = DenseTensor({cfg.vocab, cfg.width});
    for (double& v : m.embed.data()) v = rng.next();
    m.positional = DenseTensor({cfg.seq_len, cfg.width});
    for (double& v : m.positional.data()) v = 0.5 * rng.next();
    m.wq = detail::make_linear(cfg.width, cfg.width, false, rng);
    m.wk = detail::make_linear(cfg.width, cfg.width, false, rng);
    m.wv = detail::make_linear(cfg.width, cfg.width, false, rng);
    m.wo = detail::make_linear(cfg.width, cfg.width, false, rng);
    m.w1 = detail::make_linear(cfg.hidden, cfg.width, true, rng);
    m.w2 = detail::make_linear(cfg.width, cfg.hidden, true, rng);
    m.head = detail::make_linear(cfg.vocab, cfg.width, true, rng);
    return m;
}

/// A batch of token sequences and their per-position targets.
struct TokenBatch {
    std::size_t sequences = 0;
    std::size_t seq_len = 0;
    std::vector<std::size_t> tokens;
    std::vector<std::size_t> targets;
};

[[nodiscard]] inline TokenBatch make_batch(const ToyConfig& cfg, std::size_t sequences, std::mt19937_64& engine) {
    TokenBatch b{sequences, cfg.seq_len, {}, {}};
    b.tokens.resize(sequences * cfg.seq_len);
    for (auto& t : b.tokens) t = static_cast<std::size_t>(engine() % cfg.vocab);
    b.targets.resize(b.tokens.size());
    const std::size_t L = cfg.seq_len;
    for (std::size_t s = 0; s < sequences; ++s) {
        const std::size_t* x = &b.tokens[s * L];
        for (std::size_t t = 0; t < L; ++t) {
            std::size_t y = x[t];
            if (cfg.task == ToyTask::kReverse) y = x[L - 1 - t];
            if (cfg.task == ToyTask::kModularAdd) y = (x[t] + x[L - 1 - t]) % cfg.vocab;
            b.targets[s * L + t] = y;
        }
    }
    return b;
}

/// Activations kept for the backward pass.
struct ToyActivations {
    RowMatrix h0, q, k, v, a, h1, z, r, h2, logits;
    std::vector<RowMatrix> attention; // one (L x L) per sequence
};

[[nodiscard]] inline ToyActivations toy_forward(const ToyModel& m, const TokenBatch& b) {
    const std::size_t L = b.seq_len, d = m.cfg.width, n = b.sequences * L;
    ToyActivations act;
    act.h0.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    const auto E = m.embed.as_matrix();
    const auto P = m.positional.as_matrix();
    for (std::size_t i = 0; i < n; ++i) {
        act.h0.row(static_cast<Eigen::Index>(i)) =
            E.row(static_cast<Eigen::Index>(b.tokens[i])) + P.row(static_cast<Eigen::Index>(i % L));
    }
    act.q = m.wq.forward(act.h0);
    act.k = m.wk.forward(act.h0);
    act.v = m.wv.forward(act.h0);
    act.a.resize(act.h0.rows(), act.h0.cols());
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));
    const auto Li = static_cast<Eigen::Index>(L);
    for (std::size_t s = 0; s < b.sequences; ++s) {
        const auto off = static_cast<Eigen::Index>(s * L);
        RowMatrix scores = act.q.middleRows(off, Li) * act.k.middleRows(off, Li).transpose() * inv_sqrt;
        for (Eigen::Index i = 0; i < Li; ++i) {
            const double mx = scores.row(i).maxCoeff();
            scores.row(i) = (scores.row(i).array() - mx).exp();
            scores.row(i) /= scores.row(i).sum();
        }
        act.a.middleRows(off, Li) = scores * act.v.middleRows(off, Li);
        act.attention.push_back(std::move(scores));
    }
    act.h1 = act.h0 + m.wo.forward(act.a);
    act.z = m.w1.forward(act.h1);
    act.r = act.z.cwiseMax(0.0);
    act.h2 = act.h1 + m.w2.forward(act.r);
    act.logits = m.head.forward(act.h2);
    return act;
}

struct LossAndAccuracy {
    double loss = 0.0;
    double accuracy = 0.0;
};

namespace detail {

// Mean cross-entropy; fills dlogits when requested.
inline LossAndAccuracy cross_entropy(const RowMatrix& logits, const std::vector<std::size_t>& targets,
                                     RowMatrix* dlogits) {
    const auto n = logits.rows();
    LossAndAccuracy out;
    if (dlogits) dlogits->resize(n, logits.cols());
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = logits.row(i).maxCoeff();
        Eigen::RowVectorXd p = (logits.row(i).array() - mx).exp();
        const double z = p.sum();
        const auto y = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(i)]);
        out.loss += -(logits(i, y) - mx - std::log(z));
        Eigen::Index best = 0;
        logits.row(i).maxCoeff(&best);
        if (best == y) ++correct;
        if (dlogits) {
            p /= z;
            p(y) -= 1.0;
            dlogits->row(i) = p / static_cast<double>(n);
        }
    }
    out.loss /= static_cast<double>(n);
    out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return out;
}

} // namespace detail

/// Loss over a batch and the gradient of every parameter (same layout as m).
[[nodiscard]] inline std::pair<double, ToyModel> toy_gradients(const ToyModel& m, const TokenBatch& b) {
    const ToyActivations act = toy_forward(m, b);
    RowMatrix dlogits;
    const double loss = detail::cross_entropy(act.logits, b.targets, &dlogits).loss;
    ToyModel g = detail::zeros_like(m);

    const RowMatrix dh2 = m.head.backward(act.h2, dlogits, g.head);
    RowMatrix dr = m.w2.backward(act.r, dh2, g.w2);
    dr.array() *= (act.z.array() > 0.0).cast<double>();
    const RowMatrix dh1 = dh2 + m.w1.backward(act.h1, dr, g.w1);
    const RowMatrix da = m.wo.backward(act.a, dh1, g.wo);

    const std::size_t L = b.seq_len;
    const auto Li = static_cast<Eigen::Index>(L);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(m.cfg.width));
    RowMatrix dq(act.q.rows(), act.q.cols()), dk(dq.rows(), dq.cols()), dv(dq.rows(), dq.cols());
    for (std::size_t s = 0; s < b.sequences; ++s) {
        const auto off = static_cast<Eigen::Index>(s * L);
        const RowMatrix& A = act.attention[s];
        const RowMatrix dA = da.middleRows(off, Li) * act.v.middleRows(off, Li).transpose();
        dv.middleRows(off, Li) = A.transpose() * da.middleRows(off, Li);
        const Eigen::VectorXd inner = (dA.array() * A.array()).rowwise().sum();
        const RowMatrix dS = (A.array() * (dA.colwise() - inner).array()).matrix() * inv_sqrt;
        dq.middleRows(off, Li) = dS * act.k.middleRows(off, Li);
        dk.middleRows(off, Li) = dS.transpose() * act.q.middleRows(off, Li);
    }
    RowMatrix dh0 = dh1;
    dh0 += m.wq.backward(act.h0, dq, g.wq);
    dh0 += m.wk.backward(act.h0, dk, g.wk);
    dh0 += m.wv.backward(act.h0, dv, g.wv);

    auto dE = g.embed.as_matrix();
    auto dP = g.positional.as_matrix();
    for (std::size_t i = 0; i < b.tokens.size(); ++i) {
        const auto row = dh0.row(static_cast<Eigen::Index>(i));
        dE.row(static_cast<Eigen::Index>(b.tokens[i])) += row;
        dP.row(static_cast<Eigen::Index>(i % L)) += row;
    }
    return {loss, std::move(g)};
}

[[nodiscard]] inline LossAndAccuracy evaluate(const ToyModel& m, const TokenBatch& b) {
    return detail::cross_entropy(toy_forward(m, b).logits, b.targets, nullptr);
}

/// Held-out sequences drawn from a stream separate from the training one.
[[nodiscard]] inline TokenBatch eval_batch(const ToyConfig& cfg) {
    std::mt19937_64 engine(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    return make_batch(cfg, cfg.eval_sequences, engine);
}

struct TrainReport {
    std::string phase = "dense"; // dense | compressed | healed
    std::vector<double> loss_curve;
    double eval_loss = 0.0;
    double accuracy = 0.0;
    double wall_time_seconds = 0.0;
    std::size_t parameter_count = 0;
    std::size_t steps = 0;
};

/// Thrown when the training loss stops being finite; carries what was
/// recorded up to that point.
class TrainingDiverged : public DivergenceDetected {
public:
    TrainingDiverged(const std::string& what, TrainReport partial)
        : DivergenceDetected(what), partial_(std::move(partial)) {}
    [[nodiscard]] const TrainReport& partial() const noexcept { return partial_; }

private:
    TrainReport partial_;
};

[[nodiscard]] inline TrainReport evaluate_report(const ToyModel& m, std::string phase) {
    const auto start = std::chrono::steady_clock::now();
    const LossAndAccuracy e = evaluate(m, eval_batch(m.cfg));
    TrainReport r;
    r.phase = std::move(phase);
    r.eval_loss = e.loss;
    r.accuracy = e.accuracy;
    r.parameter_count = m.parameter_count();
    r.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

/// Adam on every parameter of the model. The training stream is seeded
/// from cfg.seed and the phase, so each call is reproducible.
inline TrainReport train(ToyModel& m, std::size_t steps, std::string phase = "dense") {
    const auto start = std::chrono::steady_clock::now();
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    std::mt19937_64 engine(m.cfg.seed * 2 + (phase == "dense" ? 0 : 1));
    ToyModel first = detail::zeros_like(m), second = detail::zeros_like(m);
    TrainReport report;
    report.phase = std::move(phase);

    for (std::size_t step = 0; step < steps; ++step) {
        const TokenBatch b = make_batch(m.cfg, m.cfg.batch, engine);
        auto [loss, g] = toy_gradients(m, b);
        if (!std::isfinite(loss)) {
            report.steps = step;
            report.parameter_count = m.parameter_count();
            throw TrainingDiverged("loss became non-finite at step " + std::to_string(step), report);
        }
        report.loss_curve.push_back(loss);

        std::vector<DenseTensor*> params, grads, m1, m2;
        m.for_each_param([&](DenseTensor& t) { params.push_back(&t); });
        g.for_each_param([&](DenseTensor& t) { grads.push_back(&t); });
        first.for_each_param([&](DenseTensor& t) { m1.push_back(&t); });
        second.for_each_param([&](DenseTensor& t) { m2.push_back(&t); });
        const double t = static_cast<double>(step + 1);
        const double c1 = 1.0 - std::pow(kBeta1, t), c2 = 1.0 - std::pow(kBeta2, t);
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto theta = params[p]->data();
            auto grad = grads[p]->data();
            auto mom = m1[p]->data();
            auto var = m2[p]->data();
            for (std::size_t k = 0; k < theta.size(); ++k) {
                mom[k] = kBeta1 * mom[k] + (1.0 - kBeta1) * grad[k];
                var[k] = kBeta2 * var[k] + (1.0 - kBeta2) * grad[k] * grad[k];
                theta[k] -= m.cfg.step_size * (mom[k] / c1) / (std::sqrt(var[k] / c2) + kEps);
            }
        }
    }
    const TrainReport e = evaluate_report(m, report.phase);
    report.eval_loss = e.eval_loss;
    report.accuracy = e.accuracy;
    report.parameter_count = m.parameter_count();
    report.steps = steps;
    report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

/// Replace one linear map's matrix by a lattice decomposed at chi.
inline DecomposeReport tensorize_linear(ToyLinear& lin, std::size_t chi, const ToyConfig& cfg) {
    const GridSpec spec = make_grid_spec(lin.out, lin.in, cfg.grid_rows, cfg.grid_cols);
    auto [lattice, report] = decompose_weight(lin.weight, spec, chi);
    if (cfg.als_sweeps > 0) std::tie(lattice, report) = als_refine(std::move(lattice), lin.weight, cfg.als_sweeps, 0.0, {}, report);
    lin.tensorized = TensorizedLinear{std::move(lattice)};
    lin.weight = DenseTensor{};
    return report;
}

/// The chi whose decomposed MLP weight count is closest to `fraction` of
/// the dense count (smaller chi wins ties).
[[nodiscard]] inline std::size_t chi_for_fraction(const ToyModel& m, double fraction, std::size_t max_chi = 64) {
    const double target = fraction * static_cast<double>(m.w1.weight.size() + m.w2.weight.size());
    std::size_t best_chi = 1;
    double best_gap = -1.0;
    std::size_t previous = 0;
    for (std::size_t chi = 1; chi <= max_chi; ++chi) {
        std::size_t count = 0;
        for (const ToyLinear* lin : {&m.w1, &m.w2}) {
            const GridSpec spec = make_grid_spec(lin->out, lin->in, m.cfg.grid_rows, m.cfg.grid_cols);
            count += parameter_count(decompose_weight(lin->weight, spec, chi).first);
        }
        const double gap = std::abs(static_cast<double>(count) - target);
        if (best_gap < 0.0 || gap < best_gap) {
            best_gap = gap;
            best_chi = chi;
        }
        if (count == previous) break; // bonds saturated
        previous = count;
    }
    return best_chi;
}

struct HealResult {
    ToyModel model;
    TrainReport pre_heal;
    TrainReport post_heal;
    std::size_t chi = 0;
    std::size_t dense_mlp_parameters = 0;
    std::size_t compressed_mlp_parameters = 0;
    std::vector<DecomposeReport> decompositions;
};

/// Tensorize the MLP (and optionally attention) at chi, measure, then fine-tune.
[[nodiscard]] inline HealResult compress_and_heal(const ToyModel& dense, std::size_t chi, std::size_t heal_steps) {
    if (dense.is_compressed()) throw ConfigInvalid("model is already compressed");
    HealResult out{dense, {}, {}, chi, dense.mlp_weight_count(), 0, {}};
    ToyModel& m = out.model;
    std::vector<ToyLinear*> targets{&m.w1, &m.w2};
    if (m.cfg.tensorize_attention) targets.insert(targets.end(), {&m.wq, &m.wk, &m.wv, &m.wo});
    for (ToyLinear* lin : targets) out.decompositions.push_back(tensorize_linear(*lin, chi, m.cfg));
    out.compressed_mlp_parameters = m.mlp_weight_count();
    out.pre_heal = evaluate_report(m, "compressed");
    if (heal_steps == 0) {
        out.post_heal = out.pre_heal;
        out.post_heal.phase = "healed";
        return out;
    }
    out.post_heal = train(m, heal_steps, "healed");
    return out;
}

} // namespace karipap
