#pragma once

// Conditional generators of expression parameters: the CGAN (generator plus
// conditional discriminator) and the CAAE (encoder, conditional decoder,
// latent-prior discriminator and conditional expression discriminator),
// their losses, alternating Adam training and synthesis.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "ausynth/dataio.hpp"
#include "ausynth/labels.hpp"
#include "ausynth/nn.hpp"
#include "ausynth/numerics.hpp"

namespace ausynth {

enum class ModelKind { cgan, caae };

inline std::string to_string(ModelKind k) { return k == ModelKind::cgan ? "cgan" : "caae"; }

struct TrainConfig {
    double lr = 1e-5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    std::int64_t iterations = 150000;
    std::size_t batch = 64;
    double lambda = 100.0;  // CAAE reconstruction weight
    double beta = 10.0;     // bound regularizer weight
    std::uint64_t seed = 0;
    bool soft_labels = false;
    SoftLabelNoise soft_noise;
    int d_steps = 1;  // discriminator updates per generator update
    int g_steps = 1;
    bool non_saturating = false;
    /// Decay of an exponential moving average of generator weights; the
    /// average replaces the final generator. 0 disables it.
    double generator_ema = 0.0;
    /// CAAE: feed the expression adversary G(E(x), y') with y' a shuffle of
    /// the batch labels, instead of the source labels.
    bool shuffled_targets = false;

    std::size_t noise_dim = 100;  // CGAN z
    std::size_t latent_dim = 50;  // CAAE code
    std::vector<std::size_t> cgan_g_hidden{256, 128};
    std::vector<std::size_t> cgan_d_hidden{128, 64};
    std::vector<std::size_t> caae_e_hidden{128, 64};
    std::vector<std::size_t> caae_g_hidden{128, 128};
    std::vector<std::size_t> caae_dz_hidden{64, 32};
    std::vector<std::size_t> caae_dexp_hidden{128, 64};

    /// Fill the wall_time column of the training log; off keeps logs reproducible.
    bool record_wall_time = false;

    void validate() const {
        if (!(lr > 0.0) || iterations <= 0 || batch == 0 || noise_dim == 0 || latent_dim == 0) {
            throw ConfigError("learning rate, iterations, batch size and latent sizes must be positive");
        }
        if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
            throw ConfigError("Adam betas must lie in [0, 1)");
        }
        if (!(generator_ema >= 0.0 && generator_ema < 1.0)) throw ConfigError("generator_ema must lie in [0, 1)");
        if (lambda < 0.0 || beta < 0.0) throw ConfigError("lambda and beta must be non-negative");
        if (g_steps < 1 || d_steps < g_steps) throw ConfigError("discriminator:generator step ratio must be at least 1:1");
    }
};

// ---------------------------------------------------------------------------
// Models

struct CganModel {
    std::size_t label_dim = kNumAUs;
    std::size_t param_dim = kExpressionDim;
    std::size_t noise_dim = 100;
    MlpSpec g_spec;
    MlpSpec d_spec;
    MlpWeights g;
    MlpWeights d;
    ParamBounds bounds;  // limits of the regularizer, in normalized space
    double beta = 10.0;
    std::optional<ParamBounds> normalization;  // raw-space min/max of the training data
};

struct CaaeModel {
    std::size_t label_dim = kNumAUs;
    std::size_t param_dim = kExpressionDim;
    std::size_t latent_dim = 50;
    MlpSpec e_spec;
    MlpSpec g_spec;
    MlpSpec dz_spec;
    MlpSpec dexp_spec;
    MlpWeights e;
    MlpWeights g;
    MlpWeights dz;
    MlpWeights dexp;
    ParamBounds bounds;
    double lambda = 100.0;
    double beta = 10.0;
    std::optional<ParamBounds> normalization;
};

inline CganModel make_cgan(std::size_t label_dim, std::size_t param_dim, const TrainConfig& cfg) {
    CganModel m;
    m.label_dim = label_dim;
    m.param_dim = param_dim;
    m.noise_dim = cfg.noise_dim;
    m.g_spec = MlpSpec::make(cfg.noise_dim + label_dim, cfg.cgan_g_hidden, param_dim, Activation::tanh);
    m.d_spec = MlpSpec::make(param_dim + label_dim, cfg.cgan_d_hidden, 1, Activation::sigmoid);
    m.g = init_weights(m.g_spec, cfg.seed * 4 + 1);
    m.d = init_weights(m.d_spec, cfg.seed * 4 + 2);
    m.bounds = ParamBounds::symmetric(param_dim);
    m.beta = cfg.beta;
    return m;
}

inline CaaeModel make_caae(std::size_t label_dim, std::size_t param_dim, const TrainConfig& cfg) {
    CaaeModel m;
    m.label_dim = label_dim;
    m.param_dim = param_dim;
    m.latent_dim = cfg.latent_dim;
    m.e_spec = MlpSpec::make(param_dim, cfg.caae_e_hidden, cfg.latent_dim, Activation::tanh);
    m.g_spec = MlpSpec::make(cfg.latent_dim + label_dim, cfg.caae_g_hidden, param_dim, Activation::tanh);
    m.dz_spec = MlpSpec::make(cfg.latent_dim, cfg.caae_dz_hidden, 1, Activation::sigmoid);
    m.dexp_spec = MlpSpec::make(param_dim + label_dim, cfg.caae_dexp_hidden, 1, Activation::sigmoid);
    m.e = init_weights(m.e_spec, cfg.seed * 8 + 1);
    m.g = init_weights(m.g_spec, cfg.seed * 8 + 2);
    m.dz = init_weights(m.dz_spec, cfg.seed * 8 + 3);
    m.dexp = init_weights(m.dexp_spec, cfg.seed * 8 + 4);
    m.bounds = ParamBounds::symmetric(param_dim);
    m.lambda = cfg.lambda;
    m.beta = cfg.beta;
    return m;
}

// ---------------------------------------------------------------------------
// Loss terms

/// Hinge penalty outside [lower, upper], L1 over dimensions, averaged over the batch.
inline double regularization_loss(const DenseMatrix& x, const ParamBounds& bounds) {
    if (x.rows() == 0) throw ContractError("regularization_loss on an empty batch");
    if (static_cast<std::size_t>(x.cols()) != bounds.dim()) throw ContractError("batch width does not match bounds");
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            total += std::max(x(i, j) - bounds.upper(j), 0.0) + std::max(bounds.lower(j) - x(i, j), 0.0);
        }
    }
    return total / static_cast<double>(x.rows());
}

namespace losses {

/// Tape form of regularization_loss.
inline NodeId bound_penalty(Tape& t, NodeId x, const ParamBounds& bounds) {
    const NodeId upper = t.constant(DenseMatrix(bounds.upper.transpose()), "upper");
    const NodeId lower = t.constant(DenseMatrix(bounds.lower.transpose()), "lower");
    const NodeId over = t.max_const(t.sub(x, upper), 0.0);
    const NodeId under = t.max_const(t.sub(lower, x), 0.0);
    return t.scale(t.mean(t.add(over, under)), static_cast<double>(bounds.dim()));
}

/// -mean log D(real) - mean log(1 - D(fake))
inline NodeId discriminator(Tape& t, NodeId d_real, NodeId d_fake) {
    return t.scale(t.add(t.mean(t.log(d_real)), t.mean(t.log(t.one_minus(d_fake)))), -1.0);
}

/// Generator side of the min-max game: mean log(1 - D(fake)), or the
/// non-saturating -mean log D(fake).
inline NodeId generator(Tape& t, NodeId d_fake, bool non_saturating) {
    if (non_saturating) return t.scale(t.mean(t.log(d_fake)), -1.0);
    return t.mean(t.log(t.one_minus(d_fake)));
}

/// L1 residual averaged over batch and dimensions.
inline NodeId reconstruction(Tape& t, NodeId x, NodeId recon) { return t.mean(t.abs(t.sub(x, recon))); }

}  // namespace losses

/// CGAN objective on a tape; bind a batch and both networks, then forward.
class CganGraph {
public:
    CganGraph(const CganModel& m, bool non_saturating) {
        x_real_ = tape_.input("x_real");
        y_ = tape_.input("y");
        z_ = tape_.input("z");
        gen_ = build_mlp(tape_, m.g_spec, tape_.concat(z_, y_), "G");
        disc_ = build_mlp(tape_, m.d_spec, tape_.concat(x_real_, y_), "D_exp");
        const NodeId d_fake = apply_mlp(tape_, disc_, tape_.concat(gen_.output, y_));
        l_r_ = losses::bound_penalty(tape_, gen_.output, m.bounds);
        d_loss_ = losses::discriminator(tape_, disc_.output, d_fake);
        g_adv_ = losses::generator(tape_, d_fake, non_saturating);
        g_loss_ = tape_.add(tape_.scale(l_r_, m.beta), g_adv_);
    }

    void forward(const CganModel& m, const DenseMatrix& x_real, const DenseMatrix& y, const DenseMatrix& z) {
        if (x_real.rows() != y.rows() || z.rows() != y.rows()) throw ContractError("CGAN batch sizes differ");
        if (static_cast<std::size_t>(x_real.cols()) != m.param_dim || static_cast<std::size_t>(y.cols()) != m.label_dim ||
            static_cast<std::size_t>(z.cols()) != m.noise_dim) {
            throw ContractError("CGAN batch dimensions do not match the model");
        }
        Tape::Bindings b;
        b.set(x_real_, x_real).set(y_, y).set(z_, z);
        gen_.bind(b, m.g);
        disc_.bind(b, m.d);
        tape_.forward(b);
    }

    Tape& tape() { return tape_; }
    const MlpGraph& generator() const { return gen_; }
    const MlpGraph& discriminator() const { return disc_; }
    NodeId d_loss() const { return d_loss_; }
    NodeId g_loss() const { return g_loss_; }
    NodeId g_adv() const { return g_adv_; }
    NodeId l_r() const { return l_r_; }
    NodeId fake() const { return gen_.output; }

private:
    Tape tape_;
    NodeId x_real_, y_, z_;
    MlpGraph gen_, disc_;
    NodeId l_r_, d_loss_, g_adv_, g_loss_;
};

struct CganLosses {
    double d_loss;
    double g_loss;
    double l_r;
};

inline CganLosses cgan_losses(const CganModel& m, const DenseMatrix& x_real, const DenseMatrix& y, const DenseMatrix& z,
                              bool non_saturating = false) {
    CganGraph g(m, non_saturating);
    g.forward(m, x_real, y, z);
    return {g.tape().scalar(g.d_loss()), g.tape().scalar(g.g_loss()), g.tape().scalar(g.l_r())};
}

/// CAAE objective on a tape.
class CaaeGraph {
public:
    /// With `target_branch`, the expression adversary sees G(E(x), y_target)
    /// for a separately bound y_target instead of the reconstruction branch.
    CaaeGraph(const CaaeModel& m, bool non_saturating, bool target_branch = false) : target_branch_(target_branch) {
        x_ = tape_.input("x");
        y_ = tape_.input("y");
        zstar_ = tape_.input("z_prior");
        enc_ = build_mlp(tape_, m.e_spec, x_, "E");
        gen_ = build_mlp(tape_, m.g_spec, tape_.concat(enc_.output, y_), "G");
        dz_ = build_mlp(tape_, m.dz_spec, zstar_, "D_z");
        const NodeId dz_fake = apply_mlp(tape_, dz_, enc_.output);
        dexp_ = build_mlp(tape_, m.dexp_spec, tape_.concat(x_, y_), "D_exp");
        NodeId fake_x = gen_.output, fake_y = y_;
        if (target_branch_) {
            y_target_ = tape_.input("y_target");
            fake_x = apply_mlp(tape_, gen_, tape_.concat(enc_.output, y_target_));
            fake_y = y_target_;
        }
        const NodeId dexp_fake = apply_mlp(tape_, dexp_, tape_.concat(fake_x, fake_y));

        recon_ = losses::reconstruction(tape_, x_, gen_.output);
        l_r_ = losses::bound_penalty(tape_, gen_.output, m.bounds);
        dz_loss_ = losses::discriminator(tape_, dz_.output, dz_fake);
        dexp_loss_ = losses::discriminator(tape_, dexp_.output, dexp_fake);
        prior_g_ = losses::generator(tape_, dz_fake, non_saturating);
        exp_g_ = losses::generator(tape_, dexp_fake, non_saturating);
        eg_loss_ = tape_.add(tape_.add(tape_.scale(recon_, m.lambda), tape_.scale(l_r_, m.beta)),
                             tape_.add(prior_g_, exp_g_));
    }

    void forward(const CaaeModel& m, const DenseMatrix& x, const DenseMatrix& y, const DenseMatrix& z_prior,
                 const DenseMatrix* y_target = nullptr) {
        if (x.rows() != y.rows() || z_prior.rows() != y.rows()) throw ContractError("CAAE batch sizes differ");
        if (target_branch_ && (!y_target || y_target->rows() != y.rows() || y_target->cols() != y.cols())) {
            throw ContractError("CAAE target labels missing or mis-shaped");
        }
        if (static_cast<std::size_t>(x.cols()) != m.param_dim || static_cast<std::size_t>(y.cols()) != m.label_dim ||
            static_cast<std::size_t>(z_prior.cols()) != m.latent_dim) {
            throw ContractError("CAAE batch dimensions do not match the model");
        }
        Tape::Bindings b;
        b.set(x_, x).set(y_, y).set(zstar_, z_prior);
        if (target_branch_) b.set(y_target_, *y_target);
        enc_.bind(b, m.e);
        gen_.bind(b, m.g);
        dz_.bind(b, m.dz);
        dexp_.bind(b, m.dexp);
        tape_.forward(b);
    }

    Tape& tape() { return tape_; }
    const MlpGraph& encoder() const { return enc_; }
    const MlpGraph& generator() const { return gen_; }
    const MlpGraph& prior_discriminator() const { return dz_; }
    const MlpGraph& expression_discriminator() const { return dexp_; }
    NodeId reconstruction() const { return recon_; }
    NodeId l_r() const { return l_r_; }
    NodeId dz_loss() const { return dz_loss_; }
    NodeId dexp_loss() const { return dexp_loss_; }
    NodeId prior_g() const { return prior_g_; }
    NodeId exp_g() const { return exp_g_; }
    NodeId eg_loss() const { return eg_loss_; }

private:
    Tape tape_;
    bool target_branch_;
    NodeId x_, y_, zstar_, y_target_ = 0;
    MlpGraph enc_, gen_, dz_, dexp_;
    NodeId recon_, l_r_, dz_loss_, dexp_loss_, prior_g_, exp_g_, eg_loss_;
};

struct CaaeLosses {
    double recon;       // L_G
    double prior_d;     // D_z loss
    double prior_g;     // encoder side of the prior game
    double exp_d;       // D_exp loss
    double exp_g;       // generator side of the expression game
    double l_r;
    double total_eg;    // lambda L_G + beta L_R + prior_g + exp_g
    double total_dz;
    double total_dexp;
};

inline CaaeLosses caae_losses(const CaaeModel& m, const DenseMatrix& x, const DenseMatrix& y, const DenseMatrix& z_prior,
                              bool non_saturating = false) {
    CaaeGraph g(m, non_saturating);
    g.forward(m, x, y, z_prior);
    Tape& t = g.tape();
    return {t.scalar(g.reconstruction()), t.scalar(g.dz_loss()),   t.scalar(g.prior_g()),
            t.scalar(g.dexp_loss()),      t.scalar(g.exp_g()),     t.scalar(g.l_r()),
            t.scalar(g.eg_loss()),        t.scalar(g.dz_loss()),   t.scalar(g.dexp_loss())};
}

// ---------------------------------------------------------------------------
// Training

struct LogEntry {
    std::int64_t iteration;
    double d_loss;
    double g_loss;
    double l_g;
    double l_r;
    double wall_time;
};

inline void write_log_header(std::ostream& out) { out << "iteration,d_loss,g_loss,L_G,L_R,wall_time\n"; }

inline void write_log_row(std::ostream& out, const LogEntry& e) {
    out << e.iteration << ',' << detail::format_double(e.d_loss) << ',' << detail::format_double(e.g_loss) << ','
        << detail::format_double(e.l_g) << ',' << detail::format_double(e.l_r) << ','
        << detail::format_double(e.wall_time) << '\n';
}

/// Optional sinks for the append-only log and progress lines.
struct TrainHooks {
    std::ostream* log = nullptr;
    std::ostream* progress = nullptr;
    std::int64_t progress_every = 1000;
};

template <typename Model>
struct TrainResult {
    Model model;
    std::vector<LogEntry> log;
};

namespace detail {

/// Uniform on [-1, 1]^cols.
inline DenseMatrix uniform_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    DenseMatrix z(rows, cols);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = u(rng);
    return z;
}

struct Batch {
    DenseMatrix x;
    DenseMatrix y;
};

class BatchSampler {
public:
    BatchSampler(const LabeledDataset& ds, const TrainConfig& cfg) : ds_(ds), cfg_(cfg) {}

    Batch next(Rng& rng) const {
        std::uniform_int_distribution<std::size_t> pick(0, ds_.size() - 1);
        const auto n = static_cast<Eigen::Index>(cfg_.batch);
        Batch b{DenseMatrix(n, static_cast<Eigen::Index>(ds_.param_dim)),
                DenseMatrix(n, static_cast<Eigen::Index>(ds_.label_dim))};
        for (Eigen::Index i = 0; i < n; ++i) {
            const Sample& s = ds_.samples[pick(rng)];
            b.x.row(i) = s.params.transpose();
            b.y.row(i) = cfg_.soft_labels ? soften_label(s.labels, rng, cfg_.soft_noise).scaled.transpose()
                                          : scale_label(s.labels).transpose();
        }
        return b;
    }

private:
    const LabeledDataset& ds_;
    const TrainConfig& cfg_;
};

inline void check_trainable(const LabeledDataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (ds.empty()) throw ConfigError("training dataset is empty");
    if (!ds.normalized) throw ConfigError("training dataset must be normalized first");
}

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline void emit(const LogEntry& e, std::vector<LogEntry>& log, const TrainHooks& hooks, std::int64_t total) {
    log.push_back(e);
    if (hooks.log) write_log_row(*hooks.log, e);
    if (hooks.progress && hooks.progress_every > 0 && (e.iteration % hooks.progress_every == 0 || e.iteration == total)) {
        *hooks.progress << "iter " << e.iteration << "/" << total << "  d_loss " << e.d_loss << "  g_loss " << e.g_loss
                        << "  L_G " << e.l_g << "  L_R " << e.l_r << '\n';
    }
}

}  // namespace detail

/// Alternating Adam training of the CGAN: `d_steps` discriminator updates,
/// then `g_steps` generator updates per iteration.
inline TrainResult<CganModel> train_cgan(const LabeledDataset& data, const TrainConfig& cfg, TrainHooks hooks = {}) {
    detail::check_trainable(data, cfg);
    TrainResult<CganModel> out{make_cgan(data.label_dim, data.param_dim, cfg), {}};
    CganModel& m = out.model;
    m.normalization = data.bounds;
    const AdamConfig adam{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8};
    AdamState g_state = AdamState::for_weights(m.g, adam);
    AdamState d_state = AdamState::for_weights(m.d, adam);
    MlpWeights g_avg = m.g;
    CganGraph graph(m, cfg.non_saturating);
    detail::BatchSampler sampler(data, cfg);
    Rng rng(cfg.seed);
    const detail::Stopwatch clock;
    const auto n = static_cast<Eigen::Index>(cfg.batch);
    const auto noise_cols = static_cast<Eigen::Index>(m.noise_dim);
    if (hooks.log) write_log_header(*hooks.log);

    for (std::int64_t it = 1; it <= cfg.iterations; ++it) {
        try {
            LogEntry e{it, 0.0, 0.0, 0.0, 0.0, 0.0};
            for (int k = 0; k < cfg.d_steps; ++k) {
                const auto b = sampler.next(rng);
                graph.forward(m, b.x, b.y, detail::uniform_noise(n, noise_cols, rng));
                graph.tape().backward(graph.d_loss());
                e.d_loss = graph.tape().scalar(graph.d_loss());
                adam_step(m.d, graph.discriminator().gradients(graph.tape()), d_state);
            }
            for (int k = 0; k < cfg.g_steps; ++k) {
                const auto b = sampler.next(rng);
                graph.forward(m, b.x, b.y, detail::uniform_noise(n, noise_cols, rng));
                graph.tape().backward(graph.g_loss());
                e.g_loss = graph.tape().scalar(graph.g_loss());
                e.l_r = graph.tape().scalar(graph.l_r());
                adam_step(m.g, graph.generator().gradients(graph.tape()), g_state);
                if (cfg.generator_ema > 0.0) ema_update(g_avg, m.g, cfg.generator_ema);
            }
            if (cfg.record_wall_time) e.wall_time = clock.seconds();
            if (!std::isfinite(e.d_loss) || !std::isfinite(e.g_loss)) throw NumericError("non-finite loss");
            detail::emit(e, out.log, hooks, cfg.iterations);
        } catch (const NumericError& err) {
            throw NumericError("CGAN training aborted at iteration " + std::to_string(it) + ": " + err.what());
        }
    }
    if (cfg.generator_ema > 0.0) m.g = std::move(g_avg);
    return out;
}

/// Three-way alternation per iteration: D_z update(s), D_exp update(s),
/// then the joint encoder+generator update(s).
inline TrainResult<CaaeModel> train_caae(const LabeledDataset& data, const TrainConfig& cfg, TrainHooks hooks = {}) {
    detail::check_trainable(data, cfg);
    TrainResult<CaaeModel> out{make_caae(data.label_dim, data.param_dim, cfg), {}};
    CaaeModel& m = out.model;
    m.normalization = data.bounds;
    const AdamConfig adam{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8};
    AdamState e_state = AdamState::for_weights(m.e, adam);
    AdamState g_state = AdamState::for_weights(m.g, adam);
    AdamState dz_state = AdamState::for_weights(m.dz, adam);
    AdamState dexp_state = AdamState::for_weights(m.dexp, adam);
    CaaeGraph graph(m, cfg.non_saturating, cfg.shuffled_targets);
    detail::BatchSampler sampler(data, cfg);
    Rng rng(cfg.seed);
    const detail::Stopwatch clock;
    const auto n = static_cast<Eigen::Index>(cfg.batch);
    const auto latent_cols = static_cast<Eigen::Index>(m.latent_dim);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    DenseMatrix y_target;
    const auto run_forward = [&](const detail::Batch& b) {
        const DenseMatrix z = detail::uniform_noise(n, latent_cols, rng);
        if (!cfg.shuffled_targets) return graph.forward(m, b.x, b.y, z);
        std::iota(perm.begin(), perm.end(), Eigen::Index{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        y_target.resize(b.y.rows(), b.y.cols());
        for (Eigen::Index i = 0; i < n; ++i) y_target.row(i) = b.y.row(perm[static_cast<std::size_t>(i)]);
        graph.forward(m, b.x, b.y, z, &y_target);
    };
    if (hooks.log) write_log_header(*hooks.log);

    for (std::int64_t it = 1; it <= cfg.iterations; ++it) {
        try {
            LogEntry e{it, 0.0, 0.0, 0.0, 0.0, 0.0};
            double dz_loss = 0.0;
            double dexp_loss = 0.0;
            for (int k = 0; k < cfg.d_steps; ++k) {
                const auto b = sampler.next(rng);
                run_forward(b);
                graph.tape().backward(graph.dz_loss());
                dz_loss = graph.tape().scalar(graph.dz_loss());
                adam_step(m.dz, graph.prior_discriminator().gradients(graph.tape()), dz_state);
            }
            for (int k = 0; k < cfg.d_steps; ++k) {
                const auto b = sampler.next(rng);
                run_forward(b);
                graph.tape().backward(graph.dexp_loss());
                dexp_loss = graph.tape().scalar(graph.dexp_loss());
                adam_step(m.dexp, graph.expression_discriminator().gradients(graph.tape()), dexp_state);
            }
            e.d_loss = dz_loss + dexp_loss;
            for (int k = 0; k < cfg.g_steps; ++k) {
                const auto b = sampler.next(rng);
                run_forward(b);
                graph.tape().backward(graph.eg_loss());
                e.g_loss = graph.tape().scalar(graph.eg_loss());
                e.l_g = graph.tape().scalar(graph.reconstruction());
                e.l_r = graph.tape().scalar(graph.l_r());
                const MlpWeights ge = graph.encoder().gradients(graph.tape());
                const MlpWeights gg = graph.generator().gradients(graph.tape());
                adam_step(m.e, ge, e_state);
                adam_step(m.g, gg, g_state);
            }
            if (cfg.record_wall_time) e.wall_time = clock.seconds();
            if (!std::isfinite(e.d_loss) || !std::isfinite(e.g_loss)) throw NumericError("non-finite loss");
            detail::emit(e, out.log, hooks, cfg.iterations);
        } catch (const NumericError& err) {
            throw NumericError("CAAE training aborted at iteration " + std::to_string(it) + ": " + err.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthesis (read-only on the model)

/// One output row per label row; z drawn uniformly from [-1,1]^noise_dim.
inline DenseMatrix synthesize_cgan(const CganModel& m, const DenseMatrix& y_scaled, Rng& rng) {
    if (static_cast<std::size_t>(y_scaled.cols()) != m.label_dim) throw ContractError("label width does not match CGAN");
    const DenseMatrix z = detail::uniform_noise(y_scaled.rows(), static_cast<Eigen::Index>(m.noise_dim), rng);
    DenseMatrix input(y_scaled.rows(), z.cols() + y_scaled.cols());
    input << z, y_scaled;
    return mlp_forward(m.g_spec, m.g, input);
}

inline Vector synthesize_cgan(const CganModel& m, const Vector& y_scaled, std::uint64_t seed) {
    Rng rng(seed);
    return synthesize_cgan(m, DenseMatrix(y_scaled.transpose()), rng).row(0).transpose();
}

inline DenseMatrix encode_caae(const CaaeModel& m, const DenseMatrix& x) { return mlp_forward(m.e_spec, m.e, x); }

/// G(E(x_source), y_target), row by row.
inline DenseMatrix synthesize_caae(const CaaeModel& m, const DenseMatrix& x_source, const DenseMatrix& y_target) {
    if (x_source.rows() != y_target.rows()) throw ContractError("source and target batch sizes differ");
    if (static_cast<std::size_t>(x_source.cols()) != m.param_dim || static_cast<std::size_t>(y_target.cols()) != m.label_dim) {
        throw ContractError("CAAE synthesis dimensions do not match the model");
    }
    const DenseMatrix code = encode_caae(m, x_source);
    DenseMatrix input(code.rows(), code.cols() + y_target.cols());
    input << code, y_target;
    return mlp_forward(m.g_spec, m.g, input);
}

inline Vector synthesize_caae(const CaaeModel& m, const Vector& x_source, const Vector& y_target) {
    return synthesize_caae(m, DenseMatrix(x_source.transpose()), DenseMatrix(y_target.transpose())).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Checkpoint conversion

namespace detail {

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }
inline Vector to_eigen(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline void put_bounds(Checkpoint& c, const std::string& name, const ParamBounds& b) {
    c.vectors[name + ".lower"] = to_std(b.lower);
    c.vectors[name + ".upper"] = to_std(b.upper);
}

inline std::optional<ParamBounds> get_bounds(const Checkpoint& c, const std::string& name) {
    const auto lo = c.vectors.find(name + ".lower");
    const auto hi = c.vectors.find(name + ".upper");
    if (lo == c.vectors.end() || hi == c.vectors.end()) return std::nullopt;
    return ParamBounds{to_eigen(lo->second), to_eigen(hi->second)};
}

inline std::size_t dim_scalar(const Checkpoint& c, const std::string& name) {
    return static_cast<std::size_t>(c.scalar(name));
}

}  // namespace detail

inline Checkpoint to_checkpoint(const CganModel& m, std::int64_t step, std::uint64_t seed) {
    Checkpoint c;
    c.kind = "cgan";
    c.step = step;
    c.seed = seed;
    c.networks = {{"generator", m.g_spec, m.g}, {"discriminator_exp", m.d_spec, m.d}};
    c.scalars = {{"beta", m.beta},
                 {"label_dim", static_cast<double>(m.label_dim)},
                 {"param_dim", static_cast<double>(m.param_dim)},
                 {"noise_dim", static_cast<double>(m.noise_dim)}};
    detail::put_bounds(c, "bounds", m.bounds);
    if (m.normalization) detail::put_bounds(c, "normalization", *m.normalization);
    return c;
}

inline Checkpoint to_checkpoint(const CaaeModel& m, std::int64_t step, std::uint64_t seed) {
    Checkpoint c;
    c.kind = "caae";
    c.step = step;
    c.seed = seed;
    c.networks = {{"encoder", m.e_spec, m.e},
                  {"generator", m.g_spec, m.g},
                  {"discriminator_z", m.dz_spec, m.dz},
                  {"discriminator_exp", m.dexp_spec, m.dexp}};
    c.scalars = {{"beta", m.beta},
                 {"lambda", m.lambda},
                 {"label_dim", static_cast<double>(m.label_dim)},
                 {"param_dim", static_cast<double>(m.param_dim)},
                 {"latent_dim", static_cast<double>(m.latent_dim)}};
    detail::put_bounds(c, "bounds", m.bounds);
    if (m.normalization) detail::put_bounds(c, "normalization", *m.normalization);
    return c;
}

inline CganModel cgan_from_checkpoint(const Checkpoint& c) {
    if (c.kind != "cgan") throw ParseError("checkpoint kind is '" + c.kind + "', expected cgan");
    CganModel m;
    m.label_dim = detail::dim_scalar(c, "label_dim");
    m.param_dim = detail::dim_scalar(c, "param_dim");
    m.noise_dim = detail::dim_scalar(c, "noise_dim");
    const auto& g = c.network("generator");
    const auto& d = c.network("discriminator_exp");
    m.g_spec = g.spec;
    m.g = g.weights;
    m.d_spec = d.spec;
    m.d = d.weights;
    m.beta = c.scalar("beta");
    m.bounds = detail::get_bounds(c, "bounds").value_or(ParamBounds::symmetric(m.param_dim));
    m.normalization = detail::get_bounds(c, "normalization");
    if (m.g_spec.input_dim() != m.noise_dim + m.label_dim || m.g_spec.output_dim() != m.param_dim ||
        m.d_spec.input_dim() != m.param_dim + m.label_dim || m.d_spec.output_dim() != 1) {
        throw ParseError("CGAN checkpoint network shapes are inconsistent");
    }
    return m;
}

inline CaaeModel caae_from_checkpoint(const Checkpoint& c) {
    if (c.kind != "caae") throw ParseError("checkpoint kind is '" + c.kind + "', expected caae");
    CaaeModel m;
    m.label_dim = detail::dim_scalar(c, "label_dim");
    m.param_dim = detail::dim_scalar(c, "param_dim");
    m.latent_dim = detail::dim_scalar(c, "latent_dim");
    const auto take = [&](const char* name, MlpSpec& spec, MlpWeights& w) {
        const auto& n = c.network(name);
        spec = n.spec;
        w = n.weights;
    };
    take("encoder", m.e_spec, m.e);
    take("generator", m.g_spec, m.g);
    take("discriminator_z", m.dz_spec, m.dz);
    take("discriminator_exp", m.dexp_spec, m.dexp);
    m.lambda = c.scalar("lambda");
    m.beta = c.scalar("beta");
    m.bounds = detail::get_bounds(c, "bounds").value_or(ParamBounds::symmetric(m.param_dim));
    m.normalization = detail::get_bounds(c, "normalization");
    if (m.e_spec.input_dim() != m.param_dim || m.e_spec.output_dim() != m.latent_dim ||
        m.g_spec.input_dim() != m.latent_dim + m.label_dim || m.g_spec.output_dim() != m.param_dim ||
        m.dz_spec.input_dim() != m.latent_dim || m.dexp_spec.input_dim() != m.param_dim + m.label_dim) {
        throw ParseError("CAAE checkpoint network shapes are inconsistent");
    }
    return m;
}

}  // namespace ausynth
