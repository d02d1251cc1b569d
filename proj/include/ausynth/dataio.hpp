#pragma once

// Labeled expression-parameter datasets: text and packed binary formats,
// per-dimension normalization, subject splits and the synthetic oracle
// benchmark generator.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "ausynth/blob_io.hpp"
#include "ausynth/labels.hpp"
#include "ausynth/numerics.hpp"

namespace ausynth {

inline constexpr std::size_t kExpressionDim = 79;

/// Per-dimension limits on expression parameters.
struct ParamBounds {
    Vector lower;
    Vector upper;

    static ParamBounds symmetric(std::size_t dim, double limit = 1.0) {
        const auto n = static_cast<Eigen::Index>(dim);
        return {Vector::Constant(n, -limit), Vector::Constant(n, limit)};
    }
    std::size_t dim() const { return static_cast<std::size_t>(lower.size()); }
    void validate() const {
        if (lower.size() != upper.size()) throw ContractError("bounds length mismatch");
        for (Eigen::Index i = 0; i < lower.size(); ++i) {
            if (!(lower(i) <= upper(i))) throw ContractError("lower bound exceeds upper at dimension " + std::to_string(i));
        }
    }
};

struct Sample {
    std::string subject;
    AUVector labels;
    Vector params;
    bool synthetic = false;

    bool is_neutral() const {
        return std::all_of(labels.begin(), labels.end(), [](int y) { return y == 0; });
    }
    bool operator==(const Sample& o) const {
        return subject == o.subject && labels == o.labels && params == o.params && synthetic == o.synthetic;
    }
};

struct LabeledDataset {
    std::size_t label_dim = kNumAUs;
    std::size_t param_dim = kExpressionDim;
    std::vector<Sample> samples;
    /// Raw-space min/max used by normalize_params; set once normalized.
    std::optional<ParamBounds> bounds;
    bool normalized = false;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }

    DenseMatrix param_matrix() const {
        DenseMatrix m(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(param_dim));
        for (std::size_t i = 0; i < samples.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = samples[i].params.transpose();
        return m;
    }
    DenseMatrix scaled_label_matrix() const {
        DenseMatrix m(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(label_dim));
        for (std::size_t i = 0; i < samples.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = scale_label(samples[i].labels).transpose();
        return m;
    }
    std::vector<std::string> subjects() const {
        std::set<std::string> s;
        for (const Sample& x : samples) s.insert(x.subject);
        return {s.begin(), s.end()};
    }
    /// Same metadata, no samples.
    LabeledDataset empty_like() const {
        LabeledDataset d;
        d.label_dim = label_dim;
        d.param_dim = param_dim;
        d.bounds = bounds;
        d.normalized = normalized;
        return d;
    }
    void check_sample(const Sample& s) const {
        if (s.labels.size() != label_dim || static_cast<std::size_t>(s.params.size()) != param_dim) {
            throw ContractError("sample dimensions do not match dataset");
        }
    }
};

// ---------------------------------------------------------------------------
// Text format: header row then one sample per row,
//   subject,<label columns AU...>,<param columns x...>[,synthetic]

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_double(const std::string& field) {
    const std::string t = trim(field);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) return std::nullopt;
    return v;
}

inline std::optional<long> parse_int(const std::string& field) {
    const std::string t = trim(field);
    long v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) return std::nullopt;
    return v;
}

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace detail

inline std::vector<std::string> label_column_names(std::size_t label_dim) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < label_dim; ++i) {
        names.push_back(label_dim == kNumAUs ? au_names()[i] : "AU" + std::to_string(i + 1));
    }
    return names;
}

inline void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    const bool with_flag = std::any_of(ds.samples.begin(), ds.samples.end(), [](const Sample& s) { return s.synthetic; });
    out << "subject";
    for (const auto& n : label_column_names(ds.label_dim)) out << ',' << n;
    for (std::size_t j = 0; j < ds.param_dim; ++j) out << ",x" << j;
    if (with_flag) out << ",synthetic";
    out << '\n';
    for (const Sample& s : ds.samples) {
        ds.check_sample(s);
        out << s.subject;
        for (int y : s.labels) out << ',' << y;
        for (Eigen::Index j = 0; j < s.params.size(); ++j) out << ',' << detail::format_double(s.params(j));
        if (with_flag) out << ',' << (s.synthetic ? 1 : 0);
        out << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
}

inline LabeledDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset " + path.string());
    const std::string where = path.string() + ":";
    std::string line;
    if (!std::getline(in, line)) throw ParseError(where + "1: missing header row");
    const auto header = detail::split_csv(line);
    if (header.empty() || detail::trim(header[0]) != "subject") {
        throw ParseError(where + "1: first column must be 'subject'");
    }
    LabeledDataset ds;
    ds.label_dim = 0;
    ds.param_dim = 0;
    bool has_flag = false;
    for (std::size_t c = 1; c < header.size(); ++c) {
        const std::string h = detail::trim(header[c]);
        if (h.rfind("AU", 0) == 0 && ds.param_dim == 0) {
            ++ds.label_dim;
        } else if (h.rfind("x", 0) == 0 && !has_flag) {
            ++ds.param_dim;
        } else if (h == "synthetic" && c + 1 == header.size()) {
            has_flag = true;
        } else {
            throw ParseError(where + "1: unexpected column '" + h + "'");
        }
    }
    if (ds.label_dim == 0 || ds.param_dim == 0) throw ParseError(where + "1: header needs AU and x columns");

    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv(line);
        const std::string at = where + std::to_string(lineno) + ": ";
        if (fields.size() != header.size()) {
            throw ParseError(at + "expected " + std::to_string(header.size()) + " columns, found " +
                             std::to_string(fields.size()));
        }
        Sample s;
        s.subject = detail::trim(fields[0]);
        if (s.subject.empty()) throw ParseError(at + "empty subject id");
        for (std::size_t i = 0; i < ds.label_dim; ++i) {
            const auto v = detail::parse_int(fields[1 + i]);
            if (!v) throw ParseError(at + "AU intensity '" + fields[1 + i] + "' is not an integer");
            if (!valid_intensity(static_cast<int>(*v))) {
                throw ParseError(at + "AU intensity " + std::to_string(*v) + " outside 0..5");
            }
            s.labels.push_back(static_cast<int>(*v));
        }
        s.params.resize(static_cast<Eigen::Index>(ds.param_dim));
        for (std::size_t j = 0; j < ds.param_dim; ++j) {
            const auto v = detail::parse_double(fields[1 + ds.label_dim + j]);
            if (!v || !std::isfinite(*v)) throw ParseError(at + "bad parameter value '" + fields[1 + ds.label_dim + j] + "'");
            s.params(static_cast<Eigen::Index>(j)) = *v;
        }
        if (has_flag) {
            const auto f = detail::parse_int(fields.back());
            if (!f || (*f != 0 && *f != 1)) throw ParseError(at + "synthetic flag must be 0 or 1");
            s.synthetic = *f == 1;
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// Packed binary variant: <dir>/manifest.json, labels.f32, params.f32.
inline constexpr const char* kDatasetFormat = "ausynth-dataset";

inline void save_dataset_binary(const LabeledDataset& ds, const std::filesystem::path& dir) {
    blob::ensure_directory(dir);
    std::vector<double> labels, params;
    nlohmann::json subjects = nlohmann::json::array(), flags = nlohmann::json::array();
    for (const Sample& s : ds.samples) {
        ds.check_sample(s);
        labels.insert(labels.end(), s.labels.begin(), s.labels.end());
        params.insert(params.end(), s.params.data(), s.params.data() + s.params.size());
        subjects.push_back(s.subject);
        flags.push_back(s.synthetic);
    }
    blob::write_f32(dir / "labels.f32", labels);
    blob::write_f32(dir / "params.f32", params);
    nlohmann::json doc{{"format", kDatasetFormat},   {"version", 1},
                       {"label_dim", ds.label_dim},  {"param_dim", ds.param_dim},
                       {"count", ds.samples.size()}, {"normalized", ds.normalized},
                       {"subjects", subjects},       {"synthetic", flags}};
    blob::write_json(dir / "manifest.json", doc);
}

inline LabeledDataset load_dataset_binary(const std::filesystem::path& dir) {
    const auto doc = blob::read_json(dir / "manifest.json");
    try {
        if (doc.at("format").get<std::string>() != kDatasetFormat) throw ParseError(dir.string() + ": not a dataset");
        LabeledDataset ds;
        ds.label_dim = doc.at("label_dim").get<std::size_t>();
        ds.param_dim = doc.at("param_dim").get<std::size_t>();
        ds.normalized = doc.at("normalized").get<bool>();
        const auto n = doc.at("count").get<std::size_t>();
        const auto labels = blob::read_f32(dir / "labels.f32", n * ds.label_dim);
        const auto params = blob::read_f32(dir / "params.f32", n * ds.param_dim);
        for (std::size_t i = 0; i < n; ++i) {
            Sample s;
            s.subject = doc.at("subjects").at(i).get<std::string>();
            s.synthetic = doc.at("synthetic").at(i).get<bool>();
            for (std::size_t k = 0; k < ds.label_dim; ++k) {
                const int y = static_cast<int>(labels[i * ds.label_dim + k]);
                if (!valid_intensity(y)) throw ParseError(dir.string() + ": sample " + std::to_string(i) + " AU out of range");
                s.labels.push_back(y);
            }
            s.params = Eigen::Map<const Vector>(params.data() + i * ds.param_dim, static_cast<Eigen::Index>(ds.param_dim));
            ds.samples.push_back(std::move(s));
        }
        return ds;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(dir.string() + "/manifest.json: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Normalization

inline Vector normalize_vector(const Vector& raw, const ParamBounds& b) {
    return (2.0 * (raw - b.lower).array() / (b.upper - b.lower).array() - 1.0).matrix();
}

inline Vector denormalize_vector(const Vector& n, const ParamBounds& b) {
    return (b.lower.array() + (n.array() + 1.0) * 0.5 * (b.upper - b.lower).array()).matrix();
}

inline DenseMatrix denormalize_rows(const DenseMatrix& n, const ParamBounds& b) {
    DenseMatrix out(n.rows(), n.cols());
    for (Eigen::Index i = 0; i < n.rows(); ++i) out.row(i) = denormalize_vector(n.row(i).transpose(), b).transpose();
    return out;
}

struct NormalizedDataset {
    LabeledDataset data;
    ParamBounds bounds;  // raw-space per-dimension min/max
};

/// Maps each dimension's observed [min, max] onto [-1, 1].
inline NormalizedDataset normalize_params(const LabeledDataset& ds) {
    if (ds.normalized) throw ContractError("dataset is already normalized");
    if (ds.empty()) throw ConfigError("cannot normalize an empty dataset");
    const DenseMatrix p = ds.param_matrix();
    ParamBounds b{p.colwise().minCoeff().transpose(), p.colwise().maxCoeff().transpose()};
    for (Eigen::Index j = 0; j < b.lower.size(); ++j) {
        if (!(b.upper(j) > b.lower(j))) {
            throw ContractError("normalization: dimension " + std::to_string(j) + " is constant");
        }
    }
    NormalizedDataset out{ds, b};
    for (Sample& s : out.data.samples) s.params = normalize_vector(s.params, b);
    out.data.bounds = b;
    out.data.normalized = true;
    return out;
}

struct AppliedNormalization {
    LabeledDataset data;
    std::size_t clipped = 0;  // entries that fell outside [-1,1] and were clipped
};

/// Maps held-out data with previously computed bounds, clipping to [-1, 1].
inline AppliedNormalization apply_normalization(const LabeledDataset& ds, const ParamBounds& b) {
    if (ds.normalized) throw ContractError("dataset is already normalized");
    if (b.dim() != ds.param_dim) throw ContractError("bounds dimension does not match dataset");
    AppliedNormalization out{ds, 0};
    for (Sample& s : out.data.samples) {
        s.params = normalize_vector(s.params, b);
        for (Eigen::Index j = 0; j < s.params.size(); ++j) {
            if (s.params(j) < -1.0 || s.params(j) > 1.0) {
                ++out.clipped;
                s.params(j) = std::clamp(s.params(j), -1.0, 1.0);
            }
        }
    }
    out.data.bounds = b;
    out.data.normalized = true;
    return out;
}

inline LabeledDataset denormalize_params(const LabeledDataset& ds) {
    if (!ds.normalized || !ds.bounds) throw ContractError("dataset is not normalized");
    LabeledDataset out = ds;
    for (Sample& s : out.samples) s.params = denormalize_vector(s.params, *ds.bounds);
    out.normalized = false;
    out.bounds.reset();
    return out;
}

// ---------------------------------------------------------------------------
// Splits

struct DatasetSplit {
    LabeledDataset train;
    LabeledDataset test;
};

inline DatasetSplit split_by_subject(const LabeledDataset& ds, const std::vector<std::string>& test_subjects) {
    const auto known = ds.subjects();
    for (const auto& id : test_subjects) {
        if (!std::binary_search(known.begin(), known.end(), id)) throw ConfigError("unknown subject id '" + id + "'");
    }
    const std::set<std::string> held(test_subjects.begin(), test_subjects.end());
    DatasetSplit out{ds.empty_like(), ds.empty_like()};
    for (const Sample& s : ds.samples) (held.count(s.subject) ? out.test : out.train).samples.push_back(s);
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic oracle benchmark

/// One label-conditioned Gaussian of the oracle mixture.
struct OracleComponent {
    AUVector label;
    Vector mean;
    DenseMatrix covariance;
    double weight = 1.0;
};

struct SynthOracleConfig {
    std::size_t param_dim = 2;
    std::size_t label_dim = 1;
    std::vector<OracleComponent> components;
    std::size_t sample_count = 10000;
    std::size_t subject_count = 10;
    std::uint64_t seed = 0;

    void validate() const {
        if (param_dim == 0 || label_dim == 0 || sample_count == 0 || subject_count == 0) {
            throw ConfigError("oracle dimensions and counts must be positive");
        }
        if (components.empty()) throw ConfigError("oracle needs at least one component");
        for (const auto& c : components) {
            if (c.label.size() != label_dim) throw ConfigError("oracle component label has wrong length");
            for (int y : c.label) {
                if (!valid_intensity(y)) throw ConfigError("oracle component label outside 0..5");
            }
            if (static_cast<std::size_t>(c.mean.size()) != param_dim) throw ConfigError("oracle mean has wrong length");
            const auto n = static_cast<Eigen::Index>(param_dim);
            if (c.covariance.rows() != n || c.covariance.cols() != n) throw ConfigError("oracle covariance has wrong shape");
            if (!(c.weight > 0.0)) throw ConfigError("oracle component weight must be positive");
            if (!c.covariance.isApprox(c.covariance.transpose(), 1e-12) || c.covariance.llt().info() != Eigen::Success) {
                throw ConfigError("oracle covariance is not symmetric positive definite");
            }
        }
    }
};

struct OracleDataset {
    LabeledDataset data;                       // raw (unnormalized) samples
    std::vector<OracleComponent> components;   // analytic conditional moments
    std::vector<std::size_t> component_of;     // component index per sample
};

/// Exact per-component counts by largest remainder of the weights.
inline std::vector<std::size_t> allocate_counts(const std::vector<double>& weights, std::size_t total) {
    const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<std::size_t> counts(weights.size());
    std::vector<std::pair<double, std::size_t>> rema;
    std::size_t used = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = weights[i] / sum * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        used += counts[i];
        rema.push_back({exact - std::floor(exact), i});
    }
    std::stable_sort(rema.begin(), rema.end(), [](auto a, auto b) { return a.first > b.first; });
    for (std::size_t k = 0; used < total; ++k, ++used) ++counts[rema[k % rema.size()].second];
    return counts;
}

inline OracleDataset synth_oracle_dataset(const SynthOracleConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    std::vector<double> w;
    for (const auto& c : cfg.components) w.push_back(c.weight);
    const auto counts = allocate_counts(w, cfg.sample_count);
    std::vector<std::size_t> order;
    for (std::size_t c = 0; c < counts.size(); ++c) order.insert(order.end(), counts[c], c);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<DenseMatrix> chol;
    for (const auto& c : cfg.components) chol.push_back(c.covariance.llt().matrixL());

    OracleDataset out;
    out.data.label_dim = cfg.label_dim;
    out.data.param_dim = cfg.param_dim;
    out.components = cfg.components;
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto n = static_cast<Eigen::Index>(cfg.param_dim);
    for (std::size_t i = 0; i < order.size(); ++i) {
        const std::size_t c = order[i];
        Vector z(n);
        for (Eigen::Index j = 0; j < n; ++j) z(j) = normal(rng);
        Sample s;
        s.subject = "s" + std::to_string(i % cfg.subject_count);
        s.labels = cfg.components[c].label;
        s.params = cfg.components[c].mean + chol[c] * z;
        out.data.samples.push_back(std::move(s));
        out.component_of.push_back(c);
    }
    return out;
}

/// Two expression dimensions, one AU at intensities {0, 2, 4}.
inline SynthOracleConfig toy_oracle_config(std::uint64_t seed = 0, std::size_t count = 10000) {
    SynthOracleConfig cfg;
    cfg.param_dim = 2;
    cfg.label_dim = 1;
    cfg.sample_count = count;
    cfg.seed = seed;
    DenseMatrix cov(2, 2);
    cov << 0.01, 0.0, 0.0, 0.01;
    Vector m0(2), m2(2), m4(2);
    m0 << -0.6, -0.4;
    m2 << 0.0, 0.4;
    m4 << 0.6, -0.2;
    cfg.components = {{{0}, m0, cov, 1.0}, {{2}, m2, cov, 1.0}, {{4}, m4, cov, 1.0}};
    return cfg;
}

/// Toy benchmark with the top intensity level rare.
inline SynthOracleConfig imbalanced_oracle_config(std::uint64_t seed = 0, std::size_t count = 10000) {
    SynthOracleConfig cfg = toy_oracle_config(seed, count);
    cfg.components[0].weight = 0.70;
    cfg.components[1].weight = 0.28;
    cfg.components[2].weight = 0.02;
    return cfg;
}

/// Full-shape benchmark: 12 AUs, 79 expression coefficients. Component
/// means are a fixed random linear map of the scaled label plus an offset.
inline SynthOracleConfig full_oracle_config(std::uint64_t seed = 0, std::size_t count = 20000) {
    SynthOracleConfig cfg;
    cfg.param_dim = kExpressionDim;
    cfg.label_dim = kNumAUs;
    cfg.sample_count = count;
    cfg.seed = seed;
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto p = static_cast<Eigen::Index>(kExpressionDim);
    const auto l = static_cast<Eigen::Index>(kNumAUs);
    DenseMatrix mixing(p, l);
    for (Eigen::Index i = 0; i < mixing.size(); ++i) mixing.data()[i] = 0.15 * normal(rng);
    const DenseMatrix cov = DenseMatrix::Identity(p, p) * 0.0025;
    const auto component = [&](AUVector label, double weight) {
        Vector y(l);
        for (Eigen::Index k = 0; k < l; ++k) y(k) = static_cast<double>(label[static_cast<std::size_t>(k)]) / 5.0;
        return OracleComponent{std::move(label), mixing * y, cov, weight};
    };
    cfg.components.push_back(component(AUVector(kNumAUs, 0), 4.0));
    for (std::size_t k = 0; k < kNumAUs; ++k) {
        for (int level : {2, 5}) {
            AUVector y(kNumAUs, 0);
            y[k] = level;
            cfg.components.push_back(component(y, 1.0));
        }
    }
    return cfg;
}

inline nlohmann::json oracle_to_json(const std::vector<OracleComponent>& comps) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : comps) {
        std::vector<double> mean(c.mean.data(), c.mean.data() + c.mean.size());
        std::vector<std::vector<double>> cov;
        for (Eigen::Index i = 0; i < c.covariance.rows(); ++i) {
            cov.emplace_back(c.covariance.row(i).data(), c.covariance.row(i).data() + c.covariance.cols());
        }
        arr.push_back({{"label", c.label}, {"mean", mean}, {"covariance", cov}, {"weight", c.weight}});
    }
    return arr;
}

}  // namespace ausynth
