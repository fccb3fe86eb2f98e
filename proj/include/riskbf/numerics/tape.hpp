#pragma once

// Minimal reverse-mode differentiation over row-major matrices.
//
// Every node holds an (n x d) value. Rows are typically "one user of one
// channel sample"; groups of consecutive rows form one sample. The primitive
// set is closed: whatever the policy forward pass and the rate/loss
// computation need, and nothing else.
//
// Subgradient conventions: relu'(0) = 0, (x)_+'(0) = 0, max ties go to the
// first (lowest row index) candidate.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace riskbf::ad {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct NodeId {
    std::size_t index = std::numeric_limits<std::size_t>::max();
    friend bool operator==(NodeId, NodeId) = default;
};

enum class Op {
    leaf,
    affine,          // X W^T + b
    grouped_linear,  // per row-group constant map: X_g C_g^T
    relu,
    positive_part,
    max_over,        // row r = elementwise max over candidate rows
    sq_abs,          // [re | im] -> re^2 + im^2
    log,
    scale_shift,     // per-column a * x + b
    mul_const,       // Hadamard product with a constant
    concat,          // horizontal
    lincomb,         // a X + b Y
    group_sum,       // sum rows within consecutive groups
    sum,             // all entries -> 1x1
    project_power,   // per group: scale to the power ball if outside
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::affine: return "affine";
        case Op::grouped_linear: return "grouped_linear";
        case Op::relu: return "relu";
        case Op::positive_part: return "positive_part";
        case Op::max_over: return "max_over";
        case Op::sq_abs: return "sq_abs";
        case Op::log: return "log";
        case Op::scale_shift: return "scale_shift";
        case Op::mul_const: return "mul_const";
        case Op::concat: return "concat";
        case Op::lincomb: return "lincomb";
        case Op::group_sum: return "group_sum";
        case Op::sum: return "sum";
        case Op::project_power: return "project_power";
    }
    return "unknown";
}

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }

    /// Leaf whose gradient is tracked.
    NodeId variable(Mat value) { return push_leaf(std::move(value), true); }
    /// Leaf excluded from differentiation.
    NodeId constant(Mat value) { return push_leaf(std::move(value), false); }

    NodeId affine(NodeId x, NodeId w, NodeId b) {
        const Mat& xv = value(x);
        const Mat& wv = value(w);
        const Mat& bv = value(b);
        if (xv.cols() != wv.cols() || bv.rows() != 1 || bv.cols() != wv.rows())
            throw std::invalid_argument("affine: shape mismatch");
        Mat out(xv.rows(), wv.rows());
        out.noalias() = xv * wv.transpose();
        out.rowwise() += bv.row(0);
        return push(Op::affine, {x, w, b}, std::move(out));
    }

    /// Rows are split into consecutive groups of `maps[g].cols()`-wide rows;
    /// group g is multiplied by maps[g]^T.
    NodeId grouped_linear(NodeId x, std::vector<Mat> maps, std::size_t group_rows) {
        const Mat& xv = value(x);
        check_groups(xv.rows(), group_rows, maps.size(), "grouped_linear");
        const Eigen::Index out_cols = maps.empty() ? 0 : maps.front().rows();
        Mat out(xv.rows(), out_cols);
        for (std::size_t g = 0; g < maps.size(); ++g) {
            if (maps[g].cols() != xv.cols() || maps[g].rows() != out_cols)
                throw std::invalid_argument("grouped_linear: map shape mismatch");
            out.middleRows(g * group_rows, group_rows).noalias() =
                xv.middleRows(g * group_rows, group_rows) * maps[g].transpose();
        }
        NodeId id = push(Op::grouped_linear, {x}, std::move(out));
        node(id).consts = std::move(maps);
        node(id).group = group_rows;
        return id;
    }

    NodeId relu(NodeId x) { return push(Op::relu, {x}, value(x).cwiseMax(0.0)); }
    NodeId positive_part(NodeId x) { return push(Op::positive_part, {x}, value(x).cwiseMax(0.0)); }

    /// Output row r is the elementwise max over rows candidates[r] of x.
    NodeId max_over(NodeId x, const std::vector<std::vector<std::size_t>>& candidates) {
        const Mat& xv = value(x);
        const Eigen::Index d = xv.cols();
        Mat out(static_cast<Eigen::Index>(candidates.size()), d);
        std::vector<std::size_t> arg(candidates.size() * static_cast<std::size_t>(d));
        for (std::size_t r = 0; r < candidates.size(); ++r) {
            const auto& cand = candidates[r];
            if (cand.empty()) throw std::invalid_argument("max_over: empty candidate set");
            for (Eigen::Index c = 0; c < d; ++c) {
                std::size_t best = cand.front();
                double bv = xv(static_cast<Eigen::Index>(best), c);
                for (std::size_t k = 1; k < cand.size(); ++k) {
                    const double v = xv(static_cast<Eigen::Index>(cand[k]), c);
                    if (v > bv) {
                        bv = v;
                        best = cand[k];
                    }
                }
                out(static_cast<Eigen::Index>(r), c) = bv;
                arg[r * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)] = best;
            }
        }
        NodeId id = push(Op::max_over, {x}, std::move(out));
        node(id).index = std::move(arg);
        return id;
    }

    /// Columns [0, q) hold real parts, [q, 2q) imaginary parts.
    NodeId sq_abs(NodeId x) {
        const Mat& xv = value(x);
        if (xv.cols() % 2 != 0) throw std::invalid_argument("sq_abs: odd column count");
        const Eigen::Index q = xv.cols() / 2;
        Mat out = xv.leftCols(q).cwiseAbs2() + xv.rightCols(q).cwiseAbs2();
        return push(Op::sq_abs, {x}, std::move(out));
    }

    NodeId log(NodeId x) {
        const Mat& xv = value(x);
        if ((xv.array() <= 0.0).any()) throw std::domain_error("log: non-positive argument");
        return push(Op::log, {x}, xv.array().log().matrix());
    }

    NodeId scale(NodeId x, double a, double b = 0.0) {
        const Eigen::Index d = value(x).cols();
        return scale_shift(x, RowVec::Constant(d, a), RowVec::Constant(d, b));
    }

    /// y[r, c] = a[c] * x[r, c] + b[c].
    NodeId scale_shift(NodeId x, RowVec a, RowVec b) {
        const Mat& xv = value(x);
        if (a.size() != xv.cols() || b.size() != xv.cols())
            throw std::invalid_argument("scale_shift: width mismatch");
        Mat out = (xv.array().rowwise() * a.array()).rowwise() + b.array();
        NodeId id = push(Op::scale_shift, {x}, std::move(out));
        node(id).consts = {Mat(a)};
        return id;
    }

    NodeId mul_const(NodeId x, Mat c) {
        const Mat& xv = value(x);
        if (c.rows() != xv.rows() || c.cols() != xv.cols()) throw std::invalid_argument("mul_const: shape mismatch");
        Mat out = xv.cwiseProduct(c);
        NodeId id = push(Op::mul_const, {x}, std::move(out));
        node(id).consts = {std::move(c)};
        return id;
    }

    NodeId concat(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat: no inputs");
        const Eigen::Index rows = value(parts.front()).rows();
        Eigen::Index cols = 0;
        for (NodeId p : parts) {
            if (value(p).rows() != rows) throw std::invalid_argument("concat: row mismatch");
            cols += value(p).cols();
        }
        Mat out(rows, cols);
        Eigen::Index off = 0;
        for (NodeId p : parts) {
            const Mat& pv = value(p);
            out.middleCols(off, pv.cols()) = pv;
            off += pv.cols();
        }
        return push(Op::concat, parts, std::move(out));
    }

    NodeId lincomb(NodeId x, double a, NodeId y, double b) {
        const Mat& xv = value(x);
        const Mat& yv = value(y);
        if (xv.rows() != yv.rows() || xv.cols() != yv.cols()) throw std::invalid_argument("lincomb: shape mismatch");
        Mat out = a * xv + b * yv;
        NodeId id = push(Op::lincomb, {x, y}, std::move(out));
        node(id).scalars = {a, b};
        return id;
    }

    NodeId group_sum(NodeId x, std::size_t group_rows) {
        const Mat& xv = value(x);
        if (group_rows == 0 || xv.rows() % static_cast<Eigen::Index>(group_rows) != 0)
            throw std::invalid_argument("group_sum: rows not divisible by group size");
        const Eigen::Index g = static_cast<Eigen::Index>(group_rows);
        Mat out(xv.rows() / g, xv.cols());
        for (Eigen::Index k = 0; k < out.rows(); ++k) out.row(k) = xv.middleRows(k * g, g).colwise().sum();
        NodeId id = push(Op::group_sum, {x}, std::move(out));
        node(id).group = group_rows;
        return id;
    }

    NodeId sum(NodeId x) {
        Mat out(1, 1);
        out(0, 0) = value(x).sum();
        return push(Op::sum, {x}, std::move(out));
    }

    /// For each group of rows, if the squared Frobenius norm exceeds `budget`,
    /// scale the whole group by sqrt(budget / norm^2).
    NodeId project_power(NodeId x, std::size_t group_rows, double budget) {
        const Mat& xv = value(x);
        if (budget <= 0.0) throw std::invalid_argument("project_power: budget must be positive");
        if (group_rows == 0 || xv.rows() % static_cast<Eigen::Index>(group_rows) != 0)
            throw std::invalid_argument("project_power: rows not divisible by group size");
        const Eigen::Index g = static_cast<Eigen::Index>(group_rows);
        Mat out = xv;
        std::vector<double> power(static_cast<std::size_t>(xv.rows() / g));
        for (Eigen::Index k = 0; k < xv.rows() / g; ++k) {
            const double p = xv.middleRows(k * g, g).squaredNorm();
            power[static_cast<std::size_t>(k)] = p;
            if (p > budget) out.middleRows(k * g, g) *= std::sqrt(budget / p);
        }
        NodeId id = push(Op::project_power, {x}, std::move(out));
        node(id).group = group_rows;
        node(id).scalars = std::move(power);
        node(id).scalars.push_back(budget);
        return id;
    }

    const Mat& value(NodeId id) const { return node(id).value; }
    Op op(NodeId id) const { return node(id).op; }

    /// Gradient of the last backward() target with respect to `id`
    /// (zero-sized if the node did not require a gradient).
    const Mat& grad(NodeId id) const { return node(id).grad; }

    /// Seeds d(target)/d(target) = 1 for a 1x1 target and propagates.
    void backward(NodeId target) {
        const Mat& tv = value(target);
        if (tv.rows() != 1 || tv.cols() != 1) throw std::invalid_argument("backward: target must be 1x1");
        backward(target, Mat::Ones(1, 1));
    }

    void backward(NodeId target, const Mat& seed) {
        for (auto& n : nodes_) n.grad.resize(0, 0);
        Node& t = node(target);
        if (seed.rows() != t.value.rows() || seed.cols() != t.value.cols())
            throw std::invalid_argument("backward: seed shape mismatch");
        t.grad = seed;
        for (std::size_t k = target.index + 1; k-- > 0;) {
            Node& n = nodes_[k];
            if (!n.requires_grad || n.grad.size() == 0 || n.op == Op::leaf) continue;
            propagate(n);
        }
    }

private:
    struct Node {
        Op op = Op::leaf;
        std::vector<NodeId> inputs;
        Mat value;
        Mat grad;
        bool requires_grad = false;
        std::vector<Mat> consts;
        std::vector<std::size_t> index;
        std::vector<double> scalars;
        std::size_t group = 0;
    };

    Node& node(NodeId id) {
        if (id.index >= nodes_.size()) throw std::out_of_range("tape: invalid node id");
        return nodes_[id.index];
    }
    const Node& node(NodeId id) const {
        if (id.index >= nodes_.size()) throw std::out_of_range("tape: invalid node id");
        return nodes_[id.index];
    }

    NodeId push_leaf(Mat value, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return NodeId{nodes_.size() - 1};
    }

    NodeId push(Op op, std::vector<NodeId> inputs, Mat value) {
        Node n;
        n.op = op;
        for (NodeId in : inputs) n.requires_grad = n.requires_grad || node(in).requires_grad;
        n.inputs = std::move(inputs);
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return NodeId{nodes_.size() - 1};
    }

    static void check_groups(Eigen::Index rows, std::size_t group_rows, std::size_t groups, const char* what) {
        if (group_rows == 0 || static_cast<std::size_t>(rows) != group_rows * groups)
            throw std::invalid_argument(std::string(what) + ": rows != group_rows * groups");
    }

    // Accumulates `g` into the gradient slot of input `id` if it is tracked.
    Mat* grad_slot(NodeId id) {
        Node& n = node(id);
        if (!n.requires_grad) return nullptr;
        if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        return &n.grad;
    }

    void propagate(const Node& n) {
        const Mat& dy = n.grad;
        switch (n.op) {
            case Op::affine: {
                const Mat& x = value(n.inputs[0]);
                const Mat& w = value(n.inputs[1]);
                if (Mat* dx = grad_slot(n.inputs[0])) dx->noalias() += dy * w;
                if (Mat* dw = grad_slot(n.inputs[1])) dw->noalias() += dy.transpose() * x;
                if (Mat* db = grad_slot(n.inputs[2])) *db += dy.colwise().sum();
                return;
            }
            case Op::grouped_linear: {
                Mat* dx = grad_slot(n.inputs[0]);
                if (!dx) return;
                const Eigen::Index g = static_cast<Eigen::Index>(n.group);
                for (std::size_t k = 0; k < n.consts.size(); ++k)
                    dx->middleRows(static_cast<Eigen::Index>(k) * g, g).noalias() +=
                        dy.middleRows(static_cast<Eigen::Index>(k) * g, g) * n.consts[k];
                return;
            }
            case Op::relu:
            case Op::positive_part: {
                Mat* dx = grad_slot(n.inputs[0]);
                if (!dx) return;
                const Mat& x = value(n.inputs[0]);
                *dx += (x.array() > 0.0).select(dy, 0.0).matrix();
                return;
            }
            case Op::max_over: {
                Mat* dx = grad_slot(n.inputs[0]);
                if (!dx) return;
                const Eigen::Index d = n.value.cols();
                for (Eigen::Index r = 0; r < n.value.rows(); ++r)
                    for (Eigen::Index c = 0; c < d; ++c)
                        (*dx)(static_cast<Eigen::Index>(n.index[static_cast<std::size_t>(r * d + c)]), c) += dy(r, c);
                return;
            }
            case Op::sq_abs: {
                Mat* dx = grad_slot(n.inputs[0]);
                if (!dx) return;
                const Mat& x = value(n.inputs[0]);
                const Eigen::Index q = n.value.cols();
                dx->leftCols(q) += 2.0 * x.leftCols(q).cwiseProduct(dy);
                dx->rightCols(q) += 2.0 * x.rightCols(q).cwiseProduct(dy);
                return;
            }
            case Op::log: {
                Mat* dx = grad_slot(n.inputs[0]);
                if (!dx) return;
                *dx += dy.cwiseQuotient(value(n.inputs[0]));
                return;
            }
            case Op::scale_shift: {
                Mat* dx = grad_slot(n.inputs[0]);
                if (!dx) return;
                *dx += (dy.array().rowwise() * n.consts[0].row(0).array()).matrix();
                return;
            }
            case Op::mul_const: {
                Mat* dx = grad_slot(n.inputs[0]);
                if (!dx) return;
                *dx += dy.cwiseProduct(n.consts[0]);
                return;
            }
            case Op::concat: {
                Eigen::Index off = 0;
                for (NodeId in : n.inputs) {
                    const Eigen::Index w = value(in).cols();
                    if (Mat* dx = grad_slot(in)) *dx += dy.middleCols(off, w);
                    off += w;
                }
                return;
            }
            case Op::lincomb: {
                if (Mat* dx = grad_slot(n.inputs[0])) *dx += n.scalars[0] * dy;
                if (Mat* dz = grad_slot(n.inputs[1])) *dz += n.scalars[1] * dy;
                return;
            }
            case Op::group_sum: {
                Mat* dx = grad_slot(n.inputs[0]);
                if (!dx) return;
                const Eigen::Index g = static_cast<Eigen::Index>(n.group);
                for (Eigen::Index k = 0; k < n.value.rows(); ++k)
                    dx->middleRows(k * g, g).rowwise() += dy.row(k);
                return;
            }
            case Op::sum: {
                Mat* dx = grad_slot(n.inputs[0]);
                if (!dx) return;
                dx->array() += dy(0, 0);
                return;
            }
            case Op::project_power: {
                Mat* dx = grad_slot(n.inputs[0]);
                if (!dx) return;
                const Mat& x = value(n.inputs[0]);
                const Eigen::Index g = static_cast<Eigen::Index>(n.group);
                const double budget = n.scalars.back();
                for (Eigen::Index k = 0; k < x.rows() / g; ++k) {
                    const double p = n.scalars[static_cast<std::size_t>(k)];
                    auto dyk = dy.middleRows(k * g, g);
                    if (p <= budget) {
                        dx->middleRows(k * g, g) += dyk;
                        continue;
                    }
                    // y = c x with c = sqrt(budget / p), dc/dx = -c x / p
                    const double c = std::sqrt(budget / p);
                    auto xk = x.middleRows(k * g, g);
                    const double inner = dyk.cwiseProduct(xk).sum();
                    dx->middleRows(k * g, g) += c * dyk - (c * inner / p) * xk;
                }
                return;
            }
            case Op::leaf:
                return;
        }
        throw std::logic_error(std::string("tape: unsupported primitive ") + op_name(n.op));
    }

    std::vector<Node> nodes_;
};

/// Gradient of a scalar function recorded on a fresh tape, evaluated at
/// `params` (passed to `f` as a 1 x n variable row).
inline Eigen::VectorXd tape_grad(const std::function<NodeId(Tape&, NodeId)>& f, std::span<const double> params) {
    Tape tape;
    Mat x(1, static_cast<Eigen::Index>(params.size()));
    for (std::size_t k = 0; k < params.size(); ++k) x(0, static_cast<Eigen::Index>(k)) = params[k];
    const NodeId in = tape.variable(std::move(x));
    const NodeId out = f(tape, in);
    tape.backward(out);
    const Mat& g = tape.grad(in);
    if (g.size() == 0) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
    return Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
}

}  // namespace riskbf::ad
