#pragma once

// Dense matrices and a small define-then-run reverse-mode autodiff tape.
//
// Every node holds a matrix (rows are batch samples, columns are features).
// Nodes may only reference earlier nodes, so evaluation order is insertion
// order and backward is a single reverse sweep.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ausynth/errors.hpp"

namespace ausynth {

using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Seeded random stream used everywhere randomness is needed.
using Rng = std::mt19937_64;

/// Lower clamp applied inside log nodes.
inline constexpr double kLogEpsilon = 1e-12;

using NodeId = std::size_t;

enum class OpKind {
    input,     // bound per forward, no gradient required
    param,     // bound per forward, gradient reported by backward
    constant,  // fixed at construction
    affine,    // X * W^T + b
    concat,    // column-wise [A | B]
    relu,
    tanh,
    sigmoid,
    add,  // elementwise; second operand may be 1x1 or a row vector
    mul,  // elementwise; same broadcasting as add
    mean,
    abs,
    max_const,  // max(X, c)
    log,        // log(max(X, kLogEpsilon))
};

inline const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::input: return "input";
        case OpKind::param: return "param";
        case OpKind::constant: return "constant";
        case OpKind::affine: return "affine";
        case OpKind::concat: return "concat";
        case OpKind::relu: return "relu";
        case OpKind::tanh: return "tanh";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::mean: return "mean";
        case OpKind::abs: return "abs";
        case OpKind::max_const: return "max_const";
        case OpKind::log: return "log";
    }
    return "?";
}

namespace detail {

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Broadcasts `b` (same shape, 1x1 or 1xcols) against a rows x cols shape.
inline DenseMatrix expand(const DenseMatrix& b, Eigen::Index rows, Eigen::Index cols) {
    if (b.rows() == rows && b.cols() == cols) return b;
    if (b.rows() == 1 && b.cols() == 1) return DenseMatrix::Constant(rows, cols, b(0, 0));
    return b.replicate(rows, 1);
}

// Sums a rows x cols gradient back into the operand's (possibly broadcast) shape.
inline DenseMatrix reduce_to(const DenseMatrix& g, Eigen::Index rows, Eigen::Index cols) {
    if (g.rows() == rows && g.cols() == cols) return g;
    if (rows == 1 && cols == 1) return DenseMatrix::Constant(1, 1, g.sum());
    return g.colwise().sum();
}

inline bool broadcast_compatible(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows() == b.rows() && a.cols() == b.cols()) return true;
    if (b.rows() == 1 && b.cols() == 1) return true;
    return b.rows() == 1 && b.cols() == a.cols();
}

}  // namespace detail

/// Computation graph plus per-node values and adjoints.
///
/// Build once with the op methods, then call forward() with bindings for
/// every input/param placeholder and backward() on a scalar node.
class Tape {
public:
    class Bindings {
    public:
        Bindings& set(NodeId node, const DenseMatrix& value) {
            entries_.push_back({node, &value});
            return *this;
        }
        struct Entry {
            NodeId node;
            const DenseMatrix* value;
        };
        std::span<const Entry> entries() const { return entries_; }

    private:
        std::vector<Entry> entries_;
    };

    NodeId input(std::string name) { return push(OpKind::input, {}, 0.0, std::move(name)); }
    NodeId param(std::string name) { return push(OpKind::param, {}, 0.0, std::move(name)); }
    NodeId constant(DenseMatrix value, std::string name = {}) {
        const NodeId id = push(OpKind::constant, {}, 0.0, std::move(name));
        nodes_[id].value = std::move(value);
        nodes_[id].bound = true;
        return id;
    }
    NodeId constant(double value) { return constant(DenseMatrix::Constant(1, 1, value)); }

    NodeId affine(NodeId x, NodeId weight, NodeId bias) { return push(OpKind::affine, {x, weight, bias}); }
    NodeId concat(NodeId a, NodeId b) { return push(OpKind::concat, {a, b}); }
    NodeId relu(NodeId x) { return push(OpKind::relu, {x}); }
    NodeId tanh(NodeId x) { return push(OpKind::tanh, {x}); }
    NodeId sigmoid(NodeId x) { return push(OpKind::sigmoid, {x}); }
    NodeId add(NodeId a, NodeId b) { return push(OpKind::add, {a, b}); }
    NodeId mul(NodeId a, NodeId b) { return push(OpKind::mul, {a, b}); }
    NodeId mean(NodeId x) { return push(OpKind::mean, {x}); }
    NodeId abs(NodeId x) { return push(OpKind::abs, {x}); }
    NodeId max_const(NodeId x, double c) { return push(OpKind::max_const, {x}, c); }
    NodeId log(NodeId x) { return push(OpKind::log, {x}); }

    // Compositions of the primitives above.
    NodeId scale(NodeId x, double c) { return mul(x, constant(c)); }
    NodeId sub(NodeId a, NodeId b) { return add(a, scale(b, -1.0)); }
    NodeId one_minus(NodeId x) { return add(scale(x, -1.0), constant(1.0)); }

    std::size_t size() const { return nodes_.size(); }
    OpKind kind(NodeId id) const { return node(id).op; }
    const std::string& name(NodeId id) const { return node(id).name; }

    /// Evaluates every node in insertion order.
    void forward(const Bindings& bindings) {
        for (const auto& e : bindings.entries()) {
            Node& n = node(e.node);
            if (n.op != OpKind::input && n.op != OpKind::param) {
                throw ContractError("node " + label(e.node) + " is not a placeholder");
            }
            n.value = *e.value;
            n.bound = true;
        }
        for (NodeId id = 0; id < nodes_.size(); ++id) {
            Node& n = nodes_[id];
            if (n.op == OpKind::input || n.op == OpKind::param || n.op == OpKind::constant) {
                if (!n.bound) throw ConfigError("unbound input " + label(id));
            } else {
                evaluate(id);
            }
            if (!n.value.allFinite()) throw NumericError("non-finite value at node " + label(id));
        }
        evaluated_ = true;
    }

    const DenseMatrix& value(NodeId id) const { return node(id).value; }
    double scalar(NodeId id) const {
        const DenseMatrix& v = node(id).value;
        if (v.rows() != 1 || v.cols() != 1) throw ContractError("node " + label(id) + " is not scalar");
        return v(0, 0);
    }

    /// Reverse sweep from a scalar node. Adjoints are reset first.
    void backward(NodeId output) {
        if (!evaluated_) throw ContractError("backward called before forward");
        const DenseMatrix& out = node(output).value;
        if (out.rows() != 1 || out.cols() != 1) {
            throw ContractError("backward output " + label(output) + " is not scalar");
        }
        for (Node& n : nodes_) n.adjoint.setZero(n.value.rows(), n.value.cols());
        nodes_[output].adjoint(0, 0) = 1.0;
        for (NodeId id = output + 1; id-- > 0;) propagate(id);
        if (!nodes_[output].adjoint.allFinite()) throw NumericError("non-finite adjoint");
    }

    /// Adjoint of a node after backward(); for params this is the gradient.
    const DenseMatrix& gradient(NodeId id) const { return node(id).adjoint; }

    std::vector<NodeId> params() const {
        std::vector<NodeId> out;
        for (NodeId id = 0; id < nodes_.size(); ++id) {
            if (nodes_[id].op == OpKind::param) out.push_back(id);
        }
        return out;
    }

private:
    struct Node {
        OpKind op;
        std::vector<NodeId> in;
        double c = 0.0;
        std::string name;
        DenseMatrix value;
        DenseMatrix adjoint;
        bool bound = false;
    };

    NodeId push(OpKind op, std::vector<NodeId> in, double c = 0.0, std::string name = {}) {
        const NodeId id = nodes_.size();
        for (NodeId i : in) {
            if (i >= id) throw ContractError("node input must reference an earlier node");
        }
        nodes_.push_back(Node{op, std::move(in), c, std::move(name), {}, {}, false});
        evaluated_ = false;
        return id;
    }

    Node& node(NodeId id) {
        if (id >= nodes_.size()) throw ContractError("unknown node id " + std::to_string(id));
        return nodes_[id];
    }
    const Node& node(NodeId id) const {
        if (id >= nodes_.size()) throw ContractError("unknown node id " + std::to_string(id));
        return nodes_[id];
    }

    std::string label(NodeId id) const {
        const Node& n = nodes_[id];
        std::string s = "#" + std::to_string(id) + " (" + op_name(n.op);
        if (!n.name.empty()) s += " '" + n.name + "'";
        return s + ")";
    }

    void evaluate(NodeId id) {
        Node& n = nodes_[id];
        const auto in = [&](std::size_t k) -> const DenseMatrix& { return nodes_[n.in[k]].value; };
        switch (n.op) {
            case OpKind::affine: {
                const DenseMatrix& x = in(0);
                const DenseMatrix& w = in(1);
                const DenseMatrix& b = in(2);
                if (x.cols() != w.cols() || b.rows() != 1 || b.cols() != w.rows()) {
                    throw ContractError("affine shape mismatch at " + label(id) + ": input " +
                                        std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                                        ", weight " + std::to_string(w.rows()) + "x" +
                                        std::to_string(w.cols()));
                }
                n.value.noalias() = x * w.transpose();
                n.value.rowwise() += b.row(0);
                break;
            }
            case OpKind::concat: {
                const DenseMatrix& a = in(0);
                const DenseMatrix& b = in(1);
                if (a.rows() != b.rows()) throw ContractError("concat row mismatch at " + label(id));
                n.value.resize(a.rows(), a.cols() + b.cols());
                n.value << a, b;
                break;
            }
            case OpKind::relu: n.value = in(0).cwiseMax(0.0); break;
            case OpKind::tanh: n.value = in(0).array().tanh(); break;
            case OpKind::sigmoid: n.value = in(0).unaryExpr(&detail::stable_sigmoid); break;
            case OpKind::add:
            case OpKind::mul: {
                const DenseMatrix* a = &in(0);
                const DenseMatrix* b = &in(1);
                if (!detail::broadcast_compatible(*a, *b)) {
                    if (!detail::broadcast_compatible(*b, *a)) {
                        throw ContractError("elementwise shape mismatch at " + label(id));
                    }
                    std::swap(a, b);
                }
                const DenseMatrix bb = detail::expand(*b, a->rows(), a->cols());
                if (n.op == OpKind::add) {
                    n.value = *a + bb;
                } else {
                    n.value = a->cwiseProduct(bb);
                }
                break;
            }
            case OpKind::mean: {
                const DenseMatrix& x = in(0);
                if (x.size() == 0) throw ContractError("mean of empty matrix at " + label(id));
                n.value = DenseMatrix::Constant(1, 1, x.mean());
                break;
            }
            case OpKind::abs: n.value = in(0).cwiseAbs(); break;
            case OpKind::max_const: n.value = in(0).cwiseMax(n.c); break;
            case OpKind::log: n.value = in(0).cwiseMax(kLogEpsilon).array().log(); break;
            default: break;
        }
    }

    void propagate(NodeId id) {
        Node& n = nodes_[id];
        if (n.in.empty()) return;
        const DenseMatrix& g = n.adjoint;
        const auto in_value = [&](std::size_t k) -> const DenseMatrix& { return nodes_[n.in[k]].value; };
        const auto in_adj = [&](std::size_t k) -> DenseMatrix& { return nodes_[n.in[k]].adjoint; };
        switch (n.op) {
            case OpKind::affine:
                in_adj(0).noalias() += g * in_value(1);
                in_adj(1).noalias() += g.transpose() * in_value(0);
                in_adj(2) += g.colwise().sum();
                break;
            case OpKind::concat: {
                const Eigen::Index ca = in_value(0).cols();
                in_adj(0) += g.leftCols(ca);
                in_adj(1) += g.rightCols(g.cols() - ca);
                break;
            }
            case OpKind::relu:
                in_adj(0).array() += g.array() * (in_value(0).array() > 0.0).cast<double>();
                break;
            case OpKind::tanh:
                in_adj(0).array() += g.array() * (1.0 - n.value.array().square());
                break;
            case OpKind::sigmoid:
                in_adj(0).array() += g.array() * n.value.array() * (1.0 - n.value.array());
                break;
            case OpKind::add:
            case OpKind::mul: {
                const DenseMatrix& a = in_value(0);
                const DenseMatrix& b = in_value(1);
                const Eigen::Index rows = n.value.rows();
                const Eigen::Index cols = n.value.cols();
                if (n.op == OpKind::add) {
                    in_adj(0) += detail::reduce_to(g, a.rows(), a.cols());
                    in_adj(1) += detail::reduce_to(g, b.rows(), b.cols());
                } else {
                    const DenseMatrix ae = detail::expand(a, rows, cols);
                    const DenseMatrix be = detail::expand(b, rows, cols);
                    in_adj(0) += detail::reduce_to(g.cwiseProduct(be), a.rows(), a.cols());
                    in_adj(1) += detail::reduce_to(g.cwiseProduct(ae), b.rows(), b.cols());
                }
                break;
            }
            case OpKind::mean: {
                const DenseMatrix& x = in_value(0);
                in_adj(0).array() += g(0, 0) / static_cast<double>(x.size());
                break;
            }
            case OpKind::abs:
                in_adj(0).array() += g.array() * in_value(0).array().sign();
                break;
            case OpKind::max_const:
                in_adj(0).array() += g.array() * (in_value(0).array() > n.c).cast<double>();
                break;
            case OpKind::log: {
                const auto x = in_value(0).array();
                in_adj(0).array() += (x > kLogEpsilon).select(g.array() / x, 0.0);
                break;
            }
            default: break;
        }
    }

    std::vector<Node> nodes_;
    bool evaluated_ = false;
};

/// Central-difference gradient of `loss` at `params`, one coordinate at a time.
inline std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& loss,
                                            std::span<const double> params, double h) {
    if (!(h > 0.0)) throw ContractError("finite difference step must be positive");
    std::vector<double> x(params.begin(), params.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = loss(x);
        x[i] = orig - h;
        const double fm = loss(x);
        x[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("non-finite loss in finite difference at coordinate " + std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

/// Largest coordinate-wise relative error between two gradients.
/// Coordinates whose magnitude is below `floor` are compared against `floor`.
inline double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-6) {
    if (a.size() != b.size()) throw ContractError("gradient length mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

}  // namespace ausynth
