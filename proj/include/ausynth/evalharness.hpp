#pragma once

// AU intensity estimation from expression parameters: linear SVR and an
// ordinal variant, MAE/MSE reports, the real-vs-synthetic protocol and
// augmentation sweeps.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "ausynth/condgen.hpp"
#include "ausynth/dataio.hpp"

namespace ausynth {

enum class RegressorKind { svr, osvr };

inline std::string to_string(RegressorKind k) { return k == RegressorKind::svr ? "svr" : "osvr"; }

inline RegressorKind regressor_kind_from_string(const std::string& s) {
    if (s == "svr") return RegressorKind::svr;
    if (s == "osvr") return RegressorKind::osvr;
    throw ConfigError("unknown regressor kind '" + s + "' (expected svr or osvr)");
}

struct RegressorConfig {
    RegressorKind kind = RegressorKind::svr;
    double epsilon = 0.1;  // insensitive margin
    double c = 1.0;        // loss weight
    double reg = 1e-4;     // L2 weight on w
    int iterations = 1500;
    double lr = 0.5;  // step lr / sqrt(t)
    double threshold_margin = 0.5;
    int threshold_iterations = 500;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(epsilon >= 0.0) || !(c > 0.0) || !(reg >= 0.0) || !(lr > 0.0) || iterations < 1 || threshold_iterations < 0 ||
            !(threshold_margin >= 0.0)) {
            throw ConfigError("invalid regressor hyperparameters");
        }
    }
};

/// One linear model per AU over standardized features. For osvr, each AU
/// also has kMaxIntensity sorted cut points on the linear score.
struct Regressor {
    RegressorKind kind = RegressorKind::svr;
    Vector feature_mean;
    Vector feature_scale;
    DenseMatrix weights;  // label_dim x param_dim
    Vector bias;          // label_dim
    DenseMatrix thresholds;  // label_dim x kMaxIntensity (osvr only)

    std::size_t label_dim() const { return static_cast<std::size_t>(weights.rows()); }
    std::size_t param_dim() const { return static_cast<std::size_t>(weights.cols()); }
};

namespace detail {

inline Regressor fit_standardization(const DenseMatrix& x) {
    Regressor r;
    r.feature_mean = x.colwise().mean().transpose();
    r.feature_scale.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double var = (x.col(j).array() - r.feature_mean(j)).square().mean();
        r.feature_scale(j) = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return r;
}

inline DenseMatrix standardize(const Regressor& r, const DenseMatrix& x) {
    DenseMatrix z = x.rowwise() - r.feature_mean.transpose();
    return z.array().rowwise() / r.feature_scale.transpose().array();
}

/// Full-batch subgradient descent on reg/2 |w|^2 + c * mean eps-loss, with
/// the second half of the iterates averaged.
inline void fit_linear_svr(const DenseMatrix& z, const Vector& y, const RegressorConfig& cfg, Eigen::Ref<Vector> w_out,
                           double& b_out) {
    const auto n = static_cast<double>(z.rows());
    Vector w = Vector::Zero(z.cols());
    double b = y.mean();
    Vector w_sum = Vector::Zero(z.cols());
    double b_sum = 0.0;
    int averaged = 0;
    const int avg_from = cfg.iterations / 2;
    Vector g(z.rows());
    for (int t = 1; t <= cfg.iterations; ++t) {
        const Vector r = (z * w).array() + b - y.array();
        for (Eigen::Index i = 0; i < r.size(); ++i) g(i) = r(i) > cfg.epsilon ? 1.0 : (r(i) < -cfg.epsilon ? -1.0 : 0.0);
        const Vector gw = cfg.reg * w + cfg.c * (z.transpose() * g) / n;
        const double gb = cfg.c * g.sum() / n;
        const double step = cfg.lr / std::sqrt(static_cast<double>(t));
        w -= step * gw;
        b -= step * gb;
        if (t > avg_from) {
            w_sum += w;
            b_sum += b;
            ++averaged;
        }
    }
    w_out = w_sum / averaged;
    b_out = b_sum / averaged;
}

/// All-threshold hinge on fixed scores: for cut j (1-based), samples with
/// level >= j should score above theta_j by the margin, others below it.
inline Vector fit_thresholds(const Vector& score, const std::vector<int>& level, const RegressorConfig& cfg) {
    Vector theta(kMaxIntensity);
    for (int j = 0; j < kMaxIntensity; ++j) theta(j) = j + 0.5;
    Vector sum = Vector::Zero(kMaxIntensity);
    int averaged = 0;
    const int avg_from = cfg.threshold_iterations / 2;
    const auto n = static_cast<double>(score.size());
    for (int t = 1; t <= cfg.threshold_iterations; ++t) {
        Vector g = Vector::Zero(kMaxIntensity);
        for (Eigen::Index i = 0; i < score.size(); ++i) {
            for (int j = 0; j < kMaxIntensity; ++j) {
                if (level[static_cast<std::size_t>(i)] > j) {
                    if (score(i) - theta(j) < cfg.threshold_margin) g(j) += 1.0;
                } else if (theta(j) - score(i) < cfg.threshold_margin) {
                    g(j) -= 1.0;
                }
            }
        }
        theta -= (cfg.lr / std::sqrt(static_cast<double>(t))) * (cfg.c * g / n);
        std::sort(theta.data(), theta.data() + theta.size());
        if (t > avg_from) {
            sum += theta;
            ++averaged;
        }
    }
    return averaged ? Vector(sum / averaged) : theta;
}

}  // namespace detail

inline Regressor fit_regressor(const LabeledDataset& train, const RegressorConfig& cfg) {
    cfg.validate();
    if (train.empty()) throw ConfigError("cannot fit a regressor on an empty training set");
    const DenseMatrix x = train.param_matrix();
    Regressor r = detail::fit_standardization(x);
    r.kind = cfg.kind;
    const DenseMatrix z = detail::standardize(r, x);
    const auto labels = static_cast<Eigen::Index>(train.label_dim);
    r.weights.resize(labels, x.cols());
    r.bias.resize(labels);
    if (cfg.kind == RegressorKind::osvr) r.thresholds.resize(labels, kMaxIntensity);
    for (Eigen::Index k = 0; k < labels; ++k) {
        Vector y(x.rows());
        std::vector<int> level(static_cast<std::size_t>(x.rows()));
        for (std::size_t i = 0; i < train.size(); ++i) {
            level[i] = train.samples[i].labels[static_cast<std::size_t>(k)];
            y(static_cast<Eigen::Index>(i)) = level[i];
        }
        Vector w(x.cols());
        double b = 0.0;
        detail::fit_linear_svr(z, y, cfg, w, b);
        r.weights.row(k) = w.transpose();
        r.bias(k) = b;
        if (cfg.kind == RegressorKind::osvr) {
            const Vector score = (z * w).array() + b;
            r.thresholds.row(k) = detail::fit_thresholds(score, level, cfg).transpose();
        }
    }
    if (!r.weights.allFinite() || !r.bias.allFinite()) throw NumericError("regressor fit produced non-finite weights");
    return r;
}

/// Linear scores, one column per AU.
inline DenseMatrix regressor_scores(const Regressor& r, const DenseMatrix& x) {
    if (static_cast<std::size_t>(x.cols()) != r.param_dim()) throw ContractError("feature width does not match regressor");
    return (detail::standardize(r, x) * r.weights.transpose()).rowwise() + r.bias.transpose();
}

/// Predicted intensities in [0,5]; osvr predicts the number of cut points
/// below the score.
inline DenseMatrix predict(const Regressor& r, const DenseMatrix& x) {
    DenseMatrix s = regressor_scores(r, x);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        for (Eigen::Index k = 0; k < s.cols(); ++k) {
            if (r.kind == RegressorKind::osvr) {
                int count = 0;
                for (Eigen::Index j = 0; j < r.thresholds.cols(); ++j) count += s(i, k) > r.thresholds(k, j) ? 1 : 0;
                s(i, k) = count;
            } else {
                s(i, k) = std::clamp(s(i, k), 0.0, static_cast<double>(kMaxIntensity));
            }
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Reports

struct EvalReport {
    std::vector<std::string> names;
    std::vector<double> mae;
    std::vector<double> mse;
    double mean_mae = 0.0;
    double mean_mse = 0.0;
    std::size_t count = 0;

    bool operator==(const EvalReport&) const = default;
};

/// Per-column MAE/MSE of predictions against integer truth.
inline EvalReport make_report(const DenseMatrix& predicted, const std::vector<AUVector>& truth) {
    if (truth.empty()) throw ConfigError("cannot evaluate on an empty test set");
    if (static_cast<std::size_t>(predicted.rows()) != truth.size()) throw ContractError("prediction count mismatch");
    const auto labels = static_cast<std::size_t>(predicted.cols());
    EvalReport rep;
    rep.names = label_column_names(labels);
    rep.count = truth.size();
    rep.mae.assign(labels, 0.0);
    rep.mse.assign(labels, 0.0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i].size() != labels) throw ContractError("label width mismatch in evaluation");
        for (std::size_t k = 0; k < labels; ++k) {
            const double e = predicted(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) - truth[i][k];
            rep.mae[k] += std::abs(e);
            rep.mse[k] += e * e;
        }
    }
    const auto n = static_cast<double>(truth.size());
    for (std::size_t k = 0; k < labels; ++k) {
        rep.mae[k] /= n;
        rep.mse[k] /= n;
    }
    rep.mean_mae = std::accumulate(rep.mae.begin(), rep.mae.end(), 0.0) / static_cast<double>(labels);
    rep.mean_mse = std::accumulate(rep.mse.begin(), rep.mse.end(), 0.0) / static_cast<double>(labels);
    return rep;
}

inline EvalReport evaluate(const Regressor& r, const LabeledDataset& test) {
    if (test.empty()) throw ConfigError("cannot evaluate on an empty test set");
    std::vector<AUVector> truth;
    for (const Sample& s : test.samples) truth.push_back(s.labels);
    return make_report(predict(r, test.param_matrix()), truth);
}

inline void write_report_text(std::ostream& out, const EvalReport& rep, const std::string& title) {
    out << title << " (n=" << rep.count << ")\n";
    out << std::left << std::setw(8) << "AU" << std::right << std::setw(10) << "MAE" << std::setw(10) << "MSE" << '\n';
    out << std::fixed << std::setprecision(4);
    for (std::size_t k = 0; k < rep.names.size(); ++k) {
        out << std::left << std::setw(8) << rep.names[k] << std::right << std::setw(10) << rep.mae[k] << std::setw(10)
            << rep.mse[k] << '\n';
    }
    out << std::left << std::setw(8) << "mean" << std::right << std::setw(10) << rep.mean_mae << std::setw(10)
        << rep.mean_mse << '\n';
    out.unsetf(std::ios::floatfield);
    out << std::setprecision(6);
}

/// Columns: set,au,mae,mse,count. One row per AU plus a "mean" row.
inline void write_report_csv(std::ostream& out, const EvalReport& rep, const std::string& set, bool header = true) {
    if (header) out << "set,au,mae,mse,count\n";
    for (std::size_t k = 0; k < rep.names.size(); ++k) {
        out << set << ',' << rep.names[k] << ',' << detail::format_double(rep.mae[k]) << ','
            << detail::format_double(rep.mse[k]) << ',' << rep.count << '\n';
    }
    out << set << ",mean," << detail::format_double(rep.mean_mae) << ',' << detail::format_double(rep.mean_mse) << ','
        << rep.count << '\n';
}

// ---------------------------------------------------------------------------
// Generators over raw-space parameters

class ExpressionGenerator {
public:
    virtual ~ExpressionGenerator() = default;
    /// One output row per target label. `sources` holds one raw parameter
    /// row per target; generators that ignore the source may skip it.
    virtual DenseMatrix generate(const DenseMatrix& sources, const std::vector<AUVector>& targets, Rng& rng) const = 0;
    virtual std::size_t label_dim() const = 0;
    virtual std::size_t param_dim() const = 0;
};

namespace detail {

inline DenseMatrix scaled_labels(const std::vector<AUVector>& targets, std::size_t label_dim) {
    DenseMatrix y(static_cast<Eigen::Index>(targets.size()), static_cast<Eigen::Index>(label_dim));
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i].size() != label_dim) throw ContractError("target label width does not match generator");
        y.row(static_cast<Eigen::Index>(i)) = scale_label(targets[i]).transpose();
    }
    return y;
}

inline DenseMatrix to_model_space(const DenseMatrix& raw, const std::optional<ParamBounds>& b) {
    if (!b) return raw;
    DenseMatrix out(raw.rows(), raw.cols());
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
        out.row(i) = normalize_vector(raw.row(i).transpose(), *b).cwiseMax(-1.0).cwiseMin(1.0).transpose();
    }
    return out;
}

inline DenseMatrix to_raw_space(const DenseMatrix& m, const std::optional<ParamBounds>& b) {
    return b ? denormalize_rows(m, *b) : m;
}

}  // namespace detail

class CganGenerator final : public ExpressionGenerator {
public:
    explicit CganGenerator(CganModel m) : model_(std::move(m)) {}
    DenseMatrix generate(const DenseMatrix&, const std::vector<AUVector>& targets, Rng& rng) const override {
        const DenseMatrix out = synthesize_cgan(model_, detail::scaled_labels(targets, model_.label_dim), rng);
        return detail::to_raw_space(out, model_.normalization);
    }
    std::size_t label_dim() const override { return model_.label_dim; }
    std::size_t param_dim() const override { return model_.param_dim; }

private:
    CganModel model_;
};

class CaaeGenerator final : public ExpressionGenerator {
public:
    explicit CaaeGenerator(CaaeModel m) : model_(std::move(m)) {}
    DenseMatrix generate(const DenseMatrix& sources, const std::vector<AUVector>& targets, Rng&) const override {
        if (static_cast<std::size_t>(sources.rows()) != targets.size()) throw ContractError("CAAE needs one source per target");
        const DenseMatrix x = detail::to_model_space(sources, model_.normalization);
        const DenseMatrix out = synthesize_caae(model_, x, detail::scaled_labels(targets, model_.label_dim));
        return detail::to_raw_space(out, model_.normalization);
    }
    std::size_t label_dim() const override { return model_.label_dim; }
    std::size_t param_dim() const override { return model_.param_dim; }

private:
    CaaeModel model_;
};

// ---------------------------------------------------------------------------
// Augmentation

enum class LabelSampling { uniform_observed, inverse_frequency };

inline LabelSampling label_sampling_from_string(const std::string& s) {
    if (s == "uniform") return LabelSampling::uniform_observed;
    if (s == "inverse-frequency") return LabelSampling::inverse_frequency;
    throw ConfigError("unknown label sampler '" + s + "' (expected uniform or inverse-frequency)");
}

/// Distinct label combinations with their counts, in sorted order.
inline std::map<AUVector, std::size_t> label_histogram(const LabeledDataset& ds) {
    std::map<AUVector, std::size_t> h;
    for (const Sample& s : ds.samples) ++h[s.labels];
    return h;
}

/// Appends `count` synthetic samples. Labels are observed combinations,
/// drawn uniformly or with weight 1/frequency; each synthetic sample takes
/// the subject and parameters of a random training sample as its source.
inline LabeledDataset augment(const LabeledDataset& train, const ExpressionGenerator& gen, std::size_t count,
                              LabelSampling sampling, std::uint64_t seed) {
    LabeledDataset out = train;
    if (count == 0) return out;
    if (train.empty()) throw ConfigError("cannot augment an empty dataset");
    if (gen.label_dim() != train.label_dim || gen.param_dim() != train.param_dim) {
        throw ContractError("generator dimensions do not match the dataset");
    }
    const auto hist = label_histogram(train);
    std::vector<AUVector> combos;
    std::vector<double> weights;
    for (const auto& [label, n] : hist) {
        combos.push_back(label);
        weights.push_back(sampling == LabelSampling::uniform_observed ? 1.0 : 1.0 / static_cast<double>(n));
    }
    Rng rng(seed);
    std::discrete_distribution<std::size_t> pick_label(weights.begin(), weights.end());
    std::uniform_int_distribution<std::size_t> pick_source(0, train.size() - 1);
    std::vector<AUVector> targets;
    std::vector<std::size_t> sources;
    DenseMatrix src(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(train.param_dim));
    for (std::size_t i = 0; i < count; ++i) {
        targets.push_back(combos[pick_label(rng)]);
        sources.push_back(pick_source(rng));
        src.row(static_cast<Eigen::Index>(i)) = train.samples[sources.back()].params.transpose();
    }
    const DenseMatrix gen_x = gen.generate(src, targets, rng);
    for (std::size_t i = 0; i < count; ++i) {
        Sample s;
        s.subject = train.samples[sources[i]].subject;
        s.labels = targets[i];
        s.params = gen_x.row(static_cast<Eigen::Index>(i)).transpose();
        s.synthetic = true;
        out.samples.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Real vs synthetic parameters

struct ProtocolReports {
    EvalReport real;
    EvalReport synthetic;
};

struct ProtocolConfig {
    RegressorConfig regressor;
    double train_fraction = 0.3;
    std::uint64_t seed = 0;
};

/// Fits on a random fraction of the non-neutral training samples, then
/// evaluates on (a) the real non-neutral test parameters and (b) parameters
/// generated from neutral test sources with the same non-neutral labels.
/// Sources come from the target's subject when it has a neutral sample.
inline ProtocolReports real_vs_synthetic_protocol(const LabeledDataset& train, const LabeledDataset& test,
                                       const ExpressionGenerator& gen, const ProtocolConfig& cfg) {
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0)) throw ConfigError("train fraction must lie in (0, 1]");
    std::vector<std::size_t> expressive;
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (!train.samples[i].is_neutral()) expressive.push_back(i);
    }
    if (expressive.empty()) throw ConfigError("training set has no non-neutral samples");
    Rng rng(cfg.seed);
    std::shuffle(expressive.begin(), expressive.end(), rng);
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(expressive.size()))));
    expressive.resize(keep);
    std::sort(expressive.begin(), expressive.end());
    LabeledDataset fit_set = train.empty_like();
    for (std::size_t i : expressive) fit_set.samples.push_back(train.samples[i]);
    RegressorConfig rcfg = cfg.regressor;
    rcfg.seed = cfg.seed;
    const Regressor reg = fit_regressor(fit_set, rcfg);

    LabeledDataset real = test.empty_like();
    std::map<std::string, std::vector<std::size_t>> neutral_by_subject;
    std::vector<std::size_t> neutral_all;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const Sample& s = test.samples[i];
        if (s.is_neutral()) {
            neutral_by_subject[s.subject].push_back(i);
            neutral_all.push_back(i);
        } else {
            real.samples.push_back(s);
        }
    }
    if (neutral_all.empty()) throw ConfigError("test set has no neutral samples to use as sources");
    if (real.empty()) throw ConfigError("test set has no non-neutral samples");

    DenseMatrix sources(static_cast<Eigen::Index>(real.size()), static_cast<Eigen::Index>(test.param_dim));
    std::vector<AUVector> targets;
    for (std::size_t i = 0; i < real.size(); ++i) {
        const auto it = neutral_by_subject.find(real.samples[i].subject);
        const auto& pool = it != neutral_by_subject.end() ? it->second : neutral_all;
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        sources.row(static_cast<Eigen::Index>(i)) = test.samples[pool[pick(rng)]].params.transpose();
        targets.push_back(real.samples[i].labels);
    }
    const DenseMatrix generated = gen.generate(sources, targets, rng);
    LabeledDataset synth = real;
    for (std::size_t i = 0; i < synth.size(); ++i) {
        synth.samples[i].params = generated.row(static_cast<Eigen::Index>(i)).transpose();
        synth.samples[i].synthetic = true;
    }
    return {evaluate(reg, real), evaluate(reg, synth)};
}

// ---------------------------------------------------------------------------
// Augmentation sweep

struct SweepRow {
    std::size_t added = 0;
    double multiple = 0.0;  // added / minority count
    EvalReport report;
};

/// Size of the rarest observed label combination.
inline std::size_t minority_count(const LabeledDataset& ds) {
    const auto h = label_histogram(ds);
    if (h.empty()) throw ConfigError("dataset is empty");
    std::size_t m = h.begin()->second;
    for (const auto& [_, n] : h) m = std::min(m, n);
    return m;
}

struct SweepConfig {
    RegressorConfig regressor;
    std::vector<double> multiples{1.0, 2.0, 4.0};
    LabelSampling sampling = LabelSampling::uniform_observed;
    std::uint64_t seed = 0;
};

/// First row is the unaugmented baseline, then one row per multiple of the
/// minority count.
inline std::vector<SweepRow> augmentation_sweep(const LabeledDataset& train, const LabeledDataset& test,
                                                const ExpressionGenerator& gen, const SweepConfig& cfg) {
    const std::size_t minority = minority_count(train);
    std::vector<SweepRow> rows;
    rows.push_back({0, 0.0, evaluate(fit_regressor(train, cfg.regressor), test)});
    for (double mult : cfg.multiples) {
        if (!(mult > 0.0)) throw ConfigError("sweep multiples must be positive");
        const auto added = static_cast<std::size_t>(std::llround(mult * static_cast<double>(minority)));
        const LabeledDataset aug = augment(train, gen, added, cfg.sampling, cfg.seed);
        rows.push_back({added, mult, evaluate(fit_regressor(aug, cfg.regressor), test)});
    }
    return rows;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "added,multiple,mae,mse\n";
    for (const SweepRow& r : rows) {
        out << r.added << ',' << detail::format_double(r.multiple) << ',' << detail::format_double(r.report.mean_mae) << ','
            << detail::format_double(r.report.mean_mse) << '\n';
    }
}

}  // namespace ausynth
