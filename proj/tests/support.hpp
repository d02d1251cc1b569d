#pragma once

// Shared fixtures: small random models, gradient checks over every loss
// node and network, the benchmark training configs, temp directories.

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "ausynth/condgen.hpp"
#include "ausynth/dataio.hpp"
#include "ausynth/evalharness.hpp"

namespace testsupport {

using namespace ausynth;

class TempDir {
public:
    explicit TempDir(const std::string& name)
        : path_(std::filesystem::temp_directory_path() / ("ausynth_" + name + "_" + std::to_string(::getpid()))) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline DenseMatrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    DenseMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

inline DenseMatrix random_scaled_labels(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::uniform_int_distribution<int> level(0, kMaxIntensity);
    DenseMatrix y(rows, cols);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = scale_label(static_cast<double>(level(rng)));
    return y;
}

/// Small widths so finite differences stay cheap.
inline TrainConfig small_config(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.noise_dim = 3;
    cfg.latent_dim = 2;
    cfg.cgan_g_hidden = {5, 4};
    cfg.cgan_d_hidden = {5, 3};
    cfg.caae_e_hidden = {4, 3};
    cfg.caae_g_hidden = {4, 4};
    cfg.caae_dz_hidden = {3, 3};
    cfg.caae_dexp_hidden = {5, 3};
    return cfg;
}

/// Random nonzero biases. Zero-initialized biases put dead-ReLU rows exactly
/// on the kink, where central differences and the subgradient disagree.
inline void jitter_biases(MlpWeights& w, Rng& rng, double scale = 0.1) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (Layer& l : w.layers) {
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias.data()[i] = u(rng);
    }
}

/// max relative error between `analytic` and central differences of `loss`
/// taken over the entries of `w`.
inline double weight_gradient_error(const MlpWeights& w, const MlpWeights& analytic,
                                    const std::function<double(const MlpWeights&)>& loss, double h = 1e-5) {
    const std::vector<double> flat = flatten(w);
    const auto numeric = finite_diff_grad(
        [&](std::span<const double> p) {
            MlpWeights t = w;
            unflatten(p, t);
            return loss(t);
        },
        flat, h);
    const std::vector<double> a = flatten(analytic);
    return max_relative_error(a, numeric);
}

struct GradReport {
    std::string worst_case;
    double worst = 0.0;
    int checks = 0;

    void add(const std::string& name, double err) {
        ++checks;
        if (err > worst || checks == 1) {
            worst = err;
            worst_case = name;
        }
    }
};

// ---------------------------------------------------------------------------
// CGAN

struct CganBatch {
    DenseMatrix x, y, z;
};

inline CganBatch random_cgan_batch(const CganModel& m, Eigen::Index n, Rng& rng) {
    return {uniform_matrix(n, static_cast<Eigen::Index>(m.param_dim), rng),
            random_scaled_labels(n, static_cast<Eigen::Index>(m.label_dim), rng),
            uniform_matrix(n, static_cast<Eigen::Index>(m.noise_dim), rng)};
}

enum class CganTerm { d_loss, g_loss, g_adv, l_r };
enum class CganNet { g, d };

inline NodeId cgan_node(const CganGraph& g, CganTerm t) {
    switch (t) {
        case CganTerm::d_loss: return g.d_loss();
        case CganTerm::g_loss: return g.g_loss();
        case CganTerm::g_adv: return g.g_adv();
        case CganTerm::l_r: return g.l_r();
    }
    return g.d_loss();
}

inline MlpWeights& cgan_net(CganModel& m, CganNet n) { return n == CganNet::g ? m.g : m.d; }

inline double cgan_value(const CganModel& m, const CganBatch& b, CganTerm t, bool ns) {
    CganGraph g(m, ns);
    g.forward(m, b.x, b.y, b.z);
    return g.tape().scalar(cgan_node(g, t));
}

inline MlpWeights cgan_gradient(const CganModel& m, const CganBatch& b, CganTerm t, CganNet n, bool ns) {
    CganGraph g(m, ns);
    g.forward(m, b.x, b.y, b.z);
    g.tape().backward(cgan_node(g, t));
    return (n == CganNet::g ? g.generator() : g.discriminator()).gradients(g.tape());
}

/// Every CGAN loss node against every network, both generator-loss forms.
inline void check_cgan(CganModel m, const CganBatch& b, GradReport& rep, const std::string& tag) {
    const std::vector<std::pair<CganTerm, std::string>> terms{
        {CganTerm::d_loss, "d_loss"}, {CganTerm::g_loss, "g_loss"}, {CganTerm::g_adv, "g_adv"}, {CganTerm::l_r, "L_R"}};
    const std::vector<std::pair<CganNet, std::string>> nets{{CganNet::g, "G"}, {CganNet::d, "D_exp"}};
    for (bool ns : {false, true}) {
        for (const auto& [term, tname] : terms) {
            for (const auto& [net, nname] : nets) {
                const MlpWeights analytic = cgan_gradient(m, b, term, net, ns);
                const double err = weight_gradient_error(cgan_net(m, net), analytic, [&](const MlpWeights& w) {
                    CganModel copy = m;
                    cgan_net(copy, net) = w;
                    return cgan_value(copy, b, term, ns);
                });
                rep.add(tag + " cgan " + tname + (ns ? " (ns)" : "") + " d/d" + nname, err);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// CAAE

struct CaaeBatch {
    DenseMatrix x, y, z, y_target;
};

inline CaaeBatch random_caae_batch(const CaaeModel& m, Eigen::Index n, Rng& rng) {
    return {uniform_matrix(n, static_cast<Eigen::Index>(m.param_dim), rng),
            random_scaled_labels(n, static_cast<Eigen::Index>(m.label_dim), rng),
            uniform_matrix(n, static_cast<Eigen::Index>(m.latent_dim), rng),
            random_scaled_labels(n, static_cast<Eigen::Index>(m.label_dim), rng)};
}

enum class CaaeTerm { recon, l_r, dz_loss, dexp_loss, prior_g, exp_g, eg_loss };
enum class CaaeNet { e, g, dz, dexp };

inline NodeId caae_node(const CaaeGraph& g, CaaeTerm t) {
    switch (t) {
        case CaaeTerm::recon: return g.reconstruction();
        case CaaeTerm::l_r: return g.l_r();
        case CaaeTerm::dz_loss: return g.dz_loss();
        case CaaeTerm::dexp_loss: return g.dexp_loss();
        case CaaeTerm::prior_g: return g.prior_g();
        case CaaeTerm::exp_g: return g.exp_g();
        case CaaeTerm::eg_loss: return g.eg_loss();
    }
    return g.eg_loss();
}

inline MlpWeights& caae_net(CaaeModel& m, CaaeNet n) {
    switch (n) {
        case CaaeNet::e: return m.e;
        case CaaeNet::g: return m.g;
        case CaaeNet::dz: return m.dz;
        case CaaeNet::dexp: return m.dexp;
    }
    return m.e;
}

inline const MlpGraph& caae_graph_net(const CaaeGraph& g, CaaeNet n) {
    switch (n) {
        case CaaeNet::e: return g.encoder();
        case CaaeNet::g: return g.generator();
        case CaaeNet::dz: return g.prior_discriminator();
        case CaaeNet::dexp: return g.expression_discriminator();
    }
    return g.encoder();
}

inline double caae_value(const CaaeModel& m, const CaaeBatch& b, CaaeTerm t, bool ns, bool shuffled) {
    CaaeGraph g(m, ns, shuffled);
    g.forward(m, b.x, b.y, b.z, shuffled ? &b.y_target : nullptr);
    return g.tape().scalar(caae_node(g, t));
}

inline MlpWeights caae_gradient(const CaaeModel& m, const CaaeBatch& b, CaaeTerm t, CaaeNet n, bool ns, bool shuffled) {
    CaaeGraph g(m, ns, shuffled);
    g.forward(m, b.x, b.y, b.z, shuffled ? &b.y_target : nullptr);
    g.tape().backward(caae_node(g, t));
    return caae_graph_net(g, n).gradients(g.tape());
}

inline void check_caae(CaaeModel m, const CaaeBatch& b, GradReport& rep, const std::string& tag, bool shuffled) {
    const std::vector<std::pair<CaaeTerm, std::string>> terms{
        {CaaeTerm::recon, "L_G"},          {CaaeTerm::l_r, "L_R"},        {CaaeTerm::dz_loss, "D_z loss"},
        {CaaeTerm::dexp_loss, "D_exp loss"}, {CaaeTerm::prior_g, "prior_g"}, {CaaeTerm::exp_g, "exp_g"},
        {CaaeTerm::eg_loss, "E+G total"}};
    const std::vector<std::pair<CaaeNet, std::string>> nets{
        {CaaeNet::e, "E"}, {CaaeNet::g, "G"}, {CaaeNet::dz, "D_z"}, {CaaeNet::dexp, "D_exp"}};
    for (bool ns : {false, true}) {
        for (const auto& [term, tname] : terms) {
            for (const auto& [net, nname] : nets) {
                const MlpWeights analytic = caae_gradient(m, b, term, net, ns, shuffled);
                const auto numeric_for = [&](CaaeTerm t) {
                    return finite_diff_grad(
                        [&](std::span<const double> p) {
                            CaaeModel copy = m;
                            unflatten(p, caae_net(copy, net));
                            return caae_value(copy, b, t, ns, shuffled);
                        },
                        flatten(caae_net(m, net)), 1e-5);
                };
                std::vector<double> numeric;
                if (term == CaaeTerm::eg_loss) {
                    // lambda L_G dominates the total, so differencing the sum loses the small
                    // coordinates to cancellation; difference each term, then combine
                    const std::vector<std::pair<CaaeTerm, double>> parts{
                        {CaaeTerm::recon, m.lambda}, {CaaeTerm::l_r, m.beta}, {CaaeTerm::prior_g, 1.0},
                        {CaaeTerm::exp_g, 1.0}};
                    numeric.assign(analytic.parameter_count(), 0.0);
                    for (const auto& [t, weight] : parts) {
                        const auto part = numeric_for(t);
                        for (std::size_t i = 0; i < part.size(); ++i) numeric[i] += weight * part[i];
                    }
                } else {
                    numeric = numeric_for(term);
                }
                const double err = max_relative_error(flatten(analytic), numeric);
                rep.add(tag + " caae " + tname + (ns ? " (ns)" : "") + (shuffled ? " (shuffled)" : "") + " d/d" + nname,
                        err);
            }
        }
    }
}

/// Seeded small CGAN and CAAE with tight bounds so the hinge terms are active.
inline GradReport gradient_check_seed(std::uint64_t seed) {
    GradReport rep;
    Rng rng(seed * 7919 + 3);
    const TrainConfig cfg = small_config(seed);
    CganModel cg = make_cgan(2, 3, cfg);
    cg.bounds = ParamBounds::symmetric(3, 0.3);
    jitter_biases(cg.g, rng);
    jitter_biases(cg.d, rng);
    check_cgan(cg, random_cgan_batch(cg, 6, rng), rep, "seed " + std::to_string(seed));
    CaaeModel ca = make_caae(2, 3, cfg);
    ca.bounds = ParamBounds::symmetric(3, 0.3);
    for (MlpWeights* w : {&ca.e, &ca.g, &ca.dz, &ca.dexp}) jitter_biases(*w, rng);
    const CaaeBatch b = random_caae_batch(ca, 6, rng);
    check_caae(ca, b, rep, "seed " + std::to_string(seed), false);
    check_caae(ca, b, rep, "seed " + std::to_string(seed), true);
    return rep;
}

// ---------------------------------------------------------------------------
// Benchmark configurations shared by tests and the acceptance binary.

/// CGAN on the two-dimensional toy oracle: lr 1e-3, 20k iterations.
inline TrainConfig toy_cgan_config() {
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.iterations = 20000;
    cfg.seed = 2;
    cfg.noise_dim = 4;
    cfg.cgan_g_hidden = {64, 64};
    cfg.cgan_d_hidden = {64, 64};
    cfg.adam_beta1 = 0.5;
    cfg.d_steps = 2;
    cfg.generator_ema = 0.999;
    return cfg;
}

/// CAAE on the toy oracle: lr 1e-3, 20k iterations.
inline TrainConfig toy_caae_config() {
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.iterations = 20000;
    cfg.seed = 2;
    cfg.latent_dim = 2;
    cfg.lambda = 10.0;
    cfg.caae_e_hidden = {32, 32};
    cfg.caae_g_hidden = {32, 32};
    cfg.caae_dz_hidden = {32, 32};
    cfg.caae_dexp_hidden = {32, 32};
    cfg.adam_beta1 = 0.5;
    cfg.shuffled_targets = true;
    return cfg;
}

inline const std::vector<std::string>& toy_test_subjects() {
    static const std::vector<std::string> ids{"s8", "s9"};
    return ids;
}

}  // namespace testsupport
