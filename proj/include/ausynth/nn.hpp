#pragma once

// Fully-connected networks on the autodiff tape, Glorot-uniform
// initialization, Adam, and the checkpoint directory format.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ausynth/blob_io.hpp"
#include "ausynth/numerics.hpp"

namespace ausynth {

enum class Activation { none, tanh, sigmoid };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::none: return "none";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
    }
    return "none";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "none") return Activation::none;
    if (s == "tanh") return Activation::tanh;
    if (s == "sigmoid") return Activation::sigmoid;
    throw ParseError("unknown activation '" + s + "'");
}

/// Layer widths from input to output. Hidden layers always use ReLU.
struct MlpSpec {
    std::vector<std::size_t> dims;
    Activation output = Activation::none;

    std::size_t input_dim() const { return dims.front(); }
    std::size_t output_dim() const { return dims.back(); }
    std::size_t layer_count() const { return dims.size() - 1; }

    void validate() const {
        if (dims.size() < 2) throw ContractError("MLP needs at least input and output widths");
        for (std::size_t d : dims) {
            if (d == 0) throw ContractError("MLP widths must be positive");
        }
    }

    /// Builds {input, hidden..., output}.
    static MlpSpec make(std::size_t input, const std::vector<std::size_t>& hidden, std::size_t output,
                        Activation act) {
        MlpSpec s;
        s.dims.push_back(input);
        s.dims.insert(s.dims.end(), hidden.begin(), hidden.end());
        s.dims.push_back(output);
        s.output = act;
        s.validate();
        return s;
    }
};

struct Layer {
    DenseMatrix weight;  // out x in
    DenseMatrix bias;    // 1 x out
};

struct MlpWeights {
    std::vector<Layer> layers;

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const Layer& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }

    /// Same shapes, all zeros.
    MlpWeights zeros_like() const {
        MlpWeights z;
        for (const Layer& l : layers) {
            z.layers.push_back({DenseMatrix::Zero(l.weight.rows(), l.weight.cols()),
                                DenseMatrix::Zero(1, l.bias.cols())});
        }
        return z;
    }

    bool operator==(const MlpWeights& o) const {
        if (layers.size() != o.layers.size()) return false;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (layers[i].weight != o.layers[i].weight || layers[i].bias != o.layers[i].bias) return false;
        }
        return true;
    }
};

inline MlpWeights zero_weights(const MlpSpec& spec) {
    spec.validate();
    MlpWeights w;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const auto in = static_cast<Eigen::Index>(spec.dims[l]);
        const auto out = static_cast<Eigen::Index>(spec.dims[l + 1]);
        w.layers.push_back({DenseMatrix::Zero(out, in), DenseMatrix::Zero(1, out)});
    }
    return w;
}

/// Glorot-uniform weights, zero biases; deterministic per seed.
inline MlpWeights init_weights(const MlpSpec& spec, std::uint64_t seed) {
    MlpWeights w = zero_weights(spec);
    Rng rng(seed);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const double fan = static_cast<double>(spec.dims[l] + spec.dims[l + 1]);
        const double limit = std::sqrt(6.0 / fan);
        std::uniform_real_distribution<double> dist(-limit, limit);
        DenseMatrix& m = w.layers[l].weight;
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    }
    return w;
}

inline std::vector<double> flatten(const MlpWeights& w) {
    std::vector<double> out;
    out.reserve(w.parameter_count());
    for (const Layer& l : w.layers) {
        out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
        out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
    }
    return out;
}

/// Inverse of flatten(); `w` supplies the shapes. Returns values consumed.
inline std::size_t unflatten(std::span<const double> values, MlpWeights& w) {
    std::size_t k = 0;
    for (Layer& l : w.layers) {
        for (DenseMatrix* m : {&l.weight, &l.bias}) {
            if (k + static_cast<std::size_t>(m->size()) > values.size()) {
                throw ContractError("flat parameter vector too short");
            }
            std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(k), m->size(), m->data());
            k += static_cast<std::size_t>(m->size());
        }
    }
    return k;
}

/// Placeholders and output of one MLP instantiated on a tape.
struct MlpGraph {
    MlpSpec spec;
    std::vector<NodeId> weight_nodes;
    std::vector<NodeId> bias_nodes;
    NodeId output = 0;

    void bind(Tape::Bindings& b, const MlpWeights& w) const {
        if (w.layers.size() != weight_nodes.size()) throw ContractError("weights do not match network depth");
        for (std::size_t l = 0; l < weight_nodes.size(); ++l) {
            b.set(weight_nodes[l], w.layers[l].weight);
            b.set(bias_nodes[l], w.layers[l].bias);
        }
    }

    /// Gradient with respect to this network's parameters after Tape::backward.
    MlpWeights gradients(const Tape& tape) const {
        MlpWeights g;
        for (std::size_t l = 0; l < weight_nodes.size(); ++l) {
            g.layers.push_back({tape.gradient(weight_nodes[l]), tape.gradient(bias_nodes[l])});
        }
        return g;
    }
};

/// Applies an already-instantiated network to another input; parameters are
/// shared, so their adjoints accumulate over every application.
inline NodeId apply_mlp(Tape& tape, const MlpGraph& net, NodeId input) {
    NodeId h = input;
    const std::size_t layers = net.spec.layer_count();
    for (std::size_t l = 0; l < layers; ++l) {
        h = tape.affine(h, net.weight_nodes[l], net.bias_nodes[l]);
        if (l + 1 < layers) {
            h = tape.relu(h);
        } else if (net.spec.output == Activation::tanh) {
            h = tape.tanh(h);
        } else if (net.spec.output == Activation::sigmoid) {
            h = tape.sigmoid(h);
        }
    }
    return h;
}

/// Creates parameter placeholders for `spec` and applies the network to `input`.
inline MlpGraph build_mlp(Tape& tape, const MlpSpec& spec, NodeId input, const std::string& prefix) {
    spec.validate();
    MlpGraph g{spec, {}, {}, input};
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const std::string tag = prefix + "." + std::to_string(l);
        g.weight_nodes.push_back(tape.param(tag + ".weight"));
        g.bias_nodes.push_back(tape.param(tag + ".bias"));
    }
    g.output = apply_mlp(tape, g, input);
    return g;
}

inline void check_weights(const MlpSpec& spec, const MlpWeights& w) {
    if (w.layers.size() != spec.layer_count()) throw ContractError("weights do not match network depth");
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const auto in = static_cast<Eigen::Index>(spec.dims[l]);
        const auto out = static_cast<Eigen::Index>(spec.dims[l + 1]);
        const Layer& layer = w.layers[l];
        if (layer.weight.rows() != out || layer.weight.cols() != in || layer.bias.rows() != 1 ||
            layer.bias.cols() != out) {
            throw ContractError("layer " + std::to_string(l) + " shape does not match spec");
        }
    }
}

/// Evaluates the network on a batch (one sample per row).
inline DenseMatrix mlp_forward(const MlpSpec& spec, const MlpWeights& weights, const DenseMatrix& input) {
    spec.validate();
    check_weights(spec, weights);
    if (static_cast<std::size_t>(input.cols()) != spec.input_dim()) {
        throw ContractError("MLP input has " + std::to_string(input.cols()) + " columns, expected " +
                            std::to_string(spec.input_dim()));
    }
    Tape tape;
    const NodeId x = tape.input("x");
    const MlpGraph g = build_mlp(tape, spec, x, "mlp");
    Tape::Bindings b;
    b.set(x, input);
    g.bind(b, weights);
    tape.forward(b);
    return tape.value(g.output);
}

inline Vector mlp_forward(const MlpSpec& spec, const MlpWeights& weights, const Vector& input) {
    const DenseMatrix row = input.transpose();
    return mlp_forward(spec, weights, row).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Adam

/// avg <- decay * avg + (1 - decay) * w
inline void ema_update(MlpWeights& avg, const MlpWeights& w, double decay) {
    if (avg.layers.size() != w.layers.size()) throw ContractError("ema_update: layer count mismatch");
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        Layer& a = avg.layers[l];
        const Layer& b = w.layers[l];
        if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() || a.bias.size() != b.bias.size()) {
            throw ContractError("ema_update: shape mismatch in layer " + std::to_string(l));
        }
        a.weight = decay * a.weight + (1.0 - decay) * b.weight;
        a.bias = decay * a.bias + (1.0 - decay) * b.bias;
    }
}

struct AdamConfig {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    MlpWeights m;
    MlpWeights v;
    std::int64_t t = 0;

    static AdamState for_weights(const MlpWeights& w, AdamConfig cfg) {
        return AdamState{cfg, w.zeros_like(), w.zeros_like(), 0};
    }
};

inline void adam_step(MlpWeights& weights, const MlpWeights& grads, AdamState& state) {
    if (grads.layers.size() != weights.layers.size() || state.m.layers.size() != weights.layers.size()) {
        throw ContractError("gradient shapes do not match weights");
    }
    for (std::size_t l = 0; l < grads.layers.size(); ++l) {
        if (!grads.layers[l].weight.allFinite() || !grads.layers[l].bias.allFinite()) {
            throw NumericError("non-finite gradient in layer " + std::to_string(l));
        }
    }
    state.t += 1;
    const AdamConfig& c = state.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
    const auto update = [&](DenseMatrix& w, const DenseMatrix& g, DenseMatrix& m, DenseMatrix& v) {
        if (g.rows() != w.rows() || g.cols() != w.cols()) throw ContractError("gradient shape mismatch");
        m = c.beta1 * m + (1.0 - c.beta1) * g;
        v.array() = c.beta2 * v.array() + (1.0 - c.beta2) * g.array().square();
        w.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
    };
    for (std::size_t l = 0; l < weights.layers.size(); ++l) {
        update(weights.layers[l].weight, grads.layers[l].weight, state.m.layers[l].weight,
               state.v.layers[l].weight);
        update(weights.layers[l].bias, grads.layers[l].bias, state.m.layers[l].bias, state.v.layers[l].bias);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/manifest.json plus one float32 blob per matrix/vector.

struct NamedNetwork {
    std::string name;
    MlpSpec spec;
    MlpWeights weights;
};

struct Checkpoint {
    std::string kind;
    std::vector<NamedNetwork> networks;
    std::map<std::string, std::vector<double>> vectors;
    std::map<std::string, double> scalars;
    std::int64_t step = 0;
    std::uint64_t seed = 0;

    const NamedNetwork& network(const std::string& name) const {
        for (const auto& n : networks) {
            if (n.name == name) return n;
        }
        throw ParseError("checkpoint has no network '" + name + "'");
    }
    double scalar(const std::string& name) const {
        const auto it = scalars.find(name);
        if (it == scalars.end()) throw ParseError("checkpoint has no scalar '" + name + "'");
        return it->second;
    }
};

inline constexpr const char* kCheckpointFormat = "ausynth-checkpoint";

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
    using nlohmann::json;
    blob::ensure_directory(dir);
    json doc;
    doc["format"] = kCheckpointFormat;
    doc["version"] = 1;
    doc["kind"] = ckpt.kind;
    doc["step"] = ckpt.step;
    doc["seed"] = ckpt.seed;
    doc["scalars"] = json::object();
    for (const auto& [k, v] : ckpt.scalars) doc["scalars"][k] = v;
    doc["networks"] = json::array();
    for (const NamedNetwork& net : ckpt.networks) {
        check_weights(net.spec, net.weights);
        json jn;
        jn["name"] = net.name;
        jn["dims"] = net.spec.dims;
        jn["hidden_activation"] = "relu";
        jn["output_activation"] = to_string(net.spec.output);
        jn["layers"] = json::array();
        for (std::size_t l = 0; l < net.weights.layers.size(); ++l) {
            const Layer& layer = net.weights.layers[l];
            const std::string base = net.name + "." + std::to_string(l);
            blob::write_f32(dir / (base + ".weight.f32"),
                            std::span<const double>(layer.weight.data(), static_cast<std::size_t>(layer.weight.size())));
            blob::write_f32(dir / (base + ".bias.f32"),
                            std::span<const double>(layer.bias.data(), static_cast<std::size_t>(layer.bias.size())));
            jn["layers"].push_back({{"weight", base + ".weight.f32"},
                                    {"bias", base + ".bias.f32"},
                                    {"rows", layer.weight.rows()},
                                    {"cols", layer.weight.cols()}});
        }
        doc["networks"].push_back(jn);
    }
    doc["vectors"] = json::object();
    for (const auto& [name, values] : ckpt.vectors) {
        const std::string file = "vec." + name + ".f32";
        blob::write_f32(dir / file, values);
        doc["vectors"][name] = {{"file", file}, {"length", values.size()}};
    }
    blob::write_json(dir / "manifest.json", doc);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    const nlohmann::json doc = blob::read_json(dir / "manifest.json");
    try {
        if (doc.at("format").get<std::string>() != kCheckpointFormat) {
            throw ParseError(dir.string() + ": not a checkpoint manifest");
        }
        Checkpoint ckpt;
        ckpt.kind = doc.at("kind").get<std::string>();
        ckpt.step = doc.at("step").get<std::int64_t>();
        ckpt.seed = doc.at("seed").get<std::uint64_t>();
        for (const auto& [k, v] : doc.at("scalars").items()) ckpt.scalars[k] = v.get<double>();
        for (const auto& jn : doc.at("networks")) {
            NamedNetwork net;
            net.name = jn.at("name").get<std::string>();
            net.spec.dims = jn.at("dims").get<std::vector<std::size_t>>();
            net.spec.output = activation_from_string(jn.at("output_activation").get<std::string>());
            net.spec.validate();
            net.weights = zero_weights(net.spec);
            const auto& layers = jn.at("layers");
            if (layers.size() != net.weights.layers.size()) throw ParseError("layer count mismatch in " + net.name);
            for (std::size_t l = 0; l < layers.size(); ++l) {
                Layer& layer = net.weights.layers[l];
                const auto w = blob::read_f32(dir / layers[l].at("weight").get<std::string>(),
                                              static_cast<std::size_t>(layer.weight.size()));
                const auto b = blob::read_f32(dir / layers[l].at("bias").get<std::string>(),
                                              static_cast<std::size_t>(layer.bias.size()));
                std::copy(w.begin(), w.end(), layer.weight.data());
                std::copy(b.begin(), b.end(), layer.bias.data());
            }
            ckpt.networks.push_back(std::move(net));
        }
        for (const auto& [name, jv] : doc.at("vectors").items()) {
            ckpt.vectors[name] = blob::read_f32(dir / jv.at("file").get<std::string>(), jv.at("length").get<std::size_t>());
        }
        return ckpt;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(dir.string() + "/manifest.json: " + e.what());
    }
}

}  // namespace ausynth
