#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "dapp/matrix.hpp"

namespace dapp::ad {

struct NonScalarRoot : std::runtime_error {
    explicit NonScalarRoot(const std::string& what) : std::runtime_error(what) {}
};

struct NodeId {
    std::uint32_t v = std::numeric_limits<std::uint32_t>::max();
    [[nodiscard]] bool valid() const { return v != std::numeric_limits<std::uint32_t>::max(); }
};

enum class Op : std::uint8_t {
    Leaf,
    Add,        // b may be 1x1 (scalar broadcast)
    Mul,        // elementwise; b may be 1x1
    Div,        // elementwise; b may be 1x1
    MatMul,
    Neg,
    Sum,        // full reduction to 1x1
    ColSum,     // (m x n) -> (1 x n)
    RowSum,     // (m x n) -> (m x 1)
    VCat,
    HCat,
    Cos,
    Exp,
    Log,
    Softplus,
    ClampMin,   // aux = threshold
    Scale,      // aux = constant factor
    Transpose,
    AddRowVec,  // a (m x n) + broadcast of v (1 x n) down rows
    AddColVec,  // a (m x n) + broadcast of v (m x 1) across columns
    DivRowVec,  // column j of a divided by v(0, j)
    GatherCols, // columns of a selected by idx (duplicates allowed)
};

// Reverse-mode tape over dense matrices. Parents always precede children, so
// construction order is a valid topological order. One tape per loss
// evaluation; single-threaded by design.
class Tape {
public:
    explicit Tape(std::size_t reserve_hint = 0) {
        if (reserve_hint) nodes_.reserve(reserve_hint);
    }

    // Leaves: parameters participate in backward, constants do not.
    NodeId param(Mat value) { return push(Op::Leaf, std::move(value), {}, {}, true); }
    NodeId constant(Mat value) { return push(Op::Leaf, std::move(value), {}, {}, false); }
    NodeId constant_scalar(double x) { return constant(Mat::Constant(1, 1, x)); }

    NodeId add(NodeId a, NodeId b) {
        check_broadcast("add", a, b);
        const Mat& xb = val(b);
        Mat out = xb.size() == 1 ? Mat(val(a).array() + xb(0, 0)) : Mat(val(a) + xb);
        return push(Op::Add, std::move(out), a, b);
    }

    NodeId sub(NodeId a, NodeId b) { return add(a, neg(b)); }

    NodeId mul(NodeId a, NodeId b) {
        check_broadcast("mul", a, b);
        const Mat& xb = val(b);
        Mat out = xb.size() == 1 ? Mat(val(a) * xb(0, 0)) : Mat(val(a).cwiseProduct(xb));
        return push(Op::Mul, std::move(out), a, b);
    }

    NodeId div(NodeId a, NodeId b) {
        check_broadcast("div", a, b);
        const Mat& xb = val(b);
        Mat out = xb.size() == 1 ? Mat(val(a) / xb(0, 0)) : Mat(val(a).cwiseQuotient(xb));
        return push(Op::Div, std::move(out), a, b);
    }

    NodeId matmul(NodeId a, NodeId b) {
        if (val(a).cols() != val(b).rows())
            throw ShapeMismatch("matmul: " + shape_str(val(a)) + " * " + shape_str(val(b)));
        return push(Op::MatMul, val(a) * val(b), a, b);
    }

    NodeId neg(NodeId a) { return push(Op::Neg, -val(a), a, {}); }

    NodeId sum(NodeId a) { return push(Op::Sum, Mat::Constant(1, 1, val(a).sum()), a, {}); }

    NodeId colsum(NodeId a) { return push(Op::ColSum, Mat(val(a).colwise().sum()), a, {}); }

    NodeId rowsum(NodeId a) { return push(Op::RowSum, Mat(val(a).rowwise().sum()), a, {}); }

    NodeId vcat(const std::vector<NodeId>& parts) { return cat(parts, /*vertical=*/true); }
    NodeId hcat(const std::vector<NodeId>& parts) { return cat(parts, /*vertical=*/false); }

    NodeId cos(NodeId a) { return push(Op::Cos, Mat(val(a).array().cos()), a, {}); }

    NodeId exp(NodeId a) { return push(Op::Exp, Mat(val(a).array().exp()), a, {}); }

    NodeId log(NodeId a) {
        if ((val(a).array() <= 0.0).any()) throw DomainError("log of non-positive value");
        return push(Op::Log, Mat(val(a).array().log()), a, {});
    }

    NodeId softplus(NodeId a) {
        Mat out = val(a).unaryExpr([](double x) { return dapp::softplus(x); });
        return push(Op::Softplus, std::move(out), a, {});
    }

    // Subgradient 0 below the threshold, 1 at and above it.
    NodeId clamp_min(NodeId a, double threshold) {
        Mat out = val(a).cwiseMax(threshold);
        NodeId id = push(Op::ClampMin, std::move(out), a, {});
        nodes_[id.v].aux = threshold;
        return id;
    }

    NodeId scale(NodeId a, double k) {
        NodeId id = push(Op::Scale, Mat(val(a) * k), a, {});
        nodes_[id.v].aux = k;
        return id;
    }

    NodeId transpose(NodeId a) { return push(Op::Transpose, val(a).transpose(), a, {}); }

    NodeId add_rowvec(NodeId a, NodeId v) {
        if (val(v).rows() != 1 || val(v).cols() != val(a).cols())
            throw ShapeMismatch("add_rowvec: " + shape_str(val(a)) + " + " + shape_str(val(v)));
        return push(Op::AddRowVec, Mat(val(a).rowwise() + val(v).row(0)), a, v);
    }

    NodeId add_colvec(NodeId a, NodeId v) {
        if (val(v).cols() != 1 || val(v).rows() != val(a).rows())
            throw ShapeMismatch("add_colvec: " + shape_str(val(a)) + " + " + shape_str(val(v)));
        return push(Op::AddColVec, Mat(val(a).colwise() + val(v).col(0)), a, v);
    }

    NodeId div_rowvec(NodeId a, NodeId v) {
        if (val(v).rows() != 1 || val(v).cols() != val(a).cols())
            throw ShapeMismatch("div_rowvec: " + shape_str(val(a)) + " / " + shape_str(val(v)));
        Mat out = val(a).array().rowwise() / val(v).row(0).array();
        return push(Op::DivRowVec, std::move(out), a, v);
    }

    NodeId gather_cols(NodeId a, std::vector<int> idx) {
        const Mat& x = val(a);
        Mat out(x.rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (idx[k] < 0 || idx[k] >= x.cols()) throw ShapeMismatch("gather_cols: index out of range");
            out.col(static_cast<Eigen::Index>(k)) = x.col(idx[k]);
        }
        NodeId id = push(Op::GatherCols, std::move(out), a, {});
        nodes_[id.v].idx = std::move(idx);
        return id;
    }

    [[nodiscard]] const Mat& value(NodeId id) const { return nodes_[id.v].value; }

    // Adjoint of a node after backward(); zero matrix if the node was not reached.
    [[nodiscard]] Mat grad(NodeId id) const {
        const Node& n = nodes_[id.v];
        if (n.adjoint.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
        return n.adjoint;
    }

    void reset_adjoints() {
        for (Node& n : nodes_) n.adjoint.resize(0, 0);
    }

    // Reverse sweep from a scalar root; adjoints accumulate by summation.
    void backward(NodeId root) {
        if (val(root).size() != 1) throw NonScalarRoot("backward: root must be 1x1, got " + shape_str(val(root)));
        reset_adjoints();
        adj(nodes_[root.v]) = Mat::Constant(1, 1, 1.0);
        for (std::uint32_t i = root.v + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.needs_grad || n.adjoint.size() == 0 || n.op == Op::Leaf) continue;
            propagate(n);
        }
    }

    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat adjoint;
        NodeId a, b;
        std::vector<NodeId> parts;  // VCat / HCat only
        std::vector<int> idx;       // GatherCols only
        double aux = 0.0;
        Op op = Op::Leaf;
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;

    const Mat& val(NodeId id) const { return nodes_[id.v].value; }

    static Mat& adj(Node& n) {
        if (n.adjoint.size() == 0) n.adjoint = Mat::Zero(n.value.rows(), n.value.cols());
        return n.adjoint;
    }

    void accumulate(NodeId id, const Mat& g) {
        Node& n = nodes_[id.v];
        if (!n.needs_grad) return;
        adj(n) += g;
    }

    bool wants(NodeId id) const { return id.valid() && nodes_[id.v].needs_grad; }

    void check_broadcast(const char* op, NodeId a, NodeId b) const {
        const Mat& xa = val(a);
        const Mat& xb = val(b);
        if (xb.size() == 1) return;
        if (xa.rows() != xb.rows() || xa.cols() != xb.cols())
            throw ShapeMismatch(std::string(op) + ": " + shape_str(xa) + " vs " + shape_str(xb));
    }

    NodeId push(Op op, Mat value, NodeId a, NodeId b, bool leaf_grad = false) {
        Node n;
        n.value = std::move(value);
        n.op = op;
        n.a = a;
        n.b = b;
        n.needs_grad = op == Op::Leaf ? leaf_grad : (wants(a) || wants(b));
        nodes_.push_back(std::move(n));
        return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    NodeId cat(const std::vector<NodeId>& parts, bool vertical) {
        if (parts.empty()) throw ShapeMismatch("concat of zero parts");
        Eigen::Index rows = val(parts[0]).rows(), cols = val(parts[0]).cols();
        for (std::size_t k = 1; k < parts.size(); ++k) {
            const Mat& x = val(parts[k]);
            if (vertical) {
                if (x.cols() != cols) throw ShapeMismatch("vcat: column mismatch");
                rows += x.rows();
            } else {
                if (x.rows() != rows) throw ShapeMismatch("hcat: row mismatch");
                cols += x.cols();
            }
        }
        Mat out(rows, cols);
        Eigen::Index at = 0;
        for (NodeId p : parts) {
            const Mat& x = val(p);
            if (vertical) {
                out.middleRows(at, x.rows()) = x;
                at += x.rows();
            } else {
                out.middleCols(at, x.cols()) = x;
                at += x.cols();
            }
        }
        Node n;
        n.value = std::move(out);
        n.op = vertical ? Op::VCat : Op::HCat;
        n.parts = parts;
        n.needs_grad = false;
        for (NodeId p : parts) n.needs_grad = n.needs_grad || wants(p);
        nodes_.push_back(std::move(n));
        return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    void propagate(Node& n) {
        const Mat& g = n.adjoint;
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add: {
                if (wants(n.a)) accumulate(n.a, g);
                if (wants(n.b)) {
                    if (val(n.b).size() == 1)
                        accumulate(n.b, Mat::Constant(1, 1, g.sum()));
                    else
                        accumulate(n.b, g);
                }
                break;
            }
            case Op::Mul: {
                const Mat& xa = val(n.a);
                const Mat& xb = val(n.b);
                if (xb.size() == 1) {
                    if (wants(n.a)) accumulate(n.a, Mat(g * xb(0, 0)));
                    if (wants(n.b)) accumulate(n.b, Mat::Constant(1, 1, g.cwiseProduct(xa).sum()));
                } else {
                    if (wants(n.a)) accumulate(n.a, Mat(g.cwiseProduct(xb)));
                    if (wants(n.b)) accumulate(n.b, Mat(g.cwiseProduct(xa)));
                }
                break;
            }
            case Op::Div: {
                const Mat& xa = val(n.a);
                const Mat& xb = val(n.b);
                if (xb.size() == 1) {
                    const double inv = 1.0 / xb(0, 0);
                    if (wants(n.a)) accumulate(n.a, Mat(g * inv));
                    if (wants(n.b))
                        accumulate(n.b, Mat::Constant(1, 1, -inv * inv * g.cwiseProduct(xa).sum()));
                } else {
                    if (wants(n.a)) accumulate(n.a, Mat(g.cwiseQuotient(xb)));
                    if (wants(n.b))
                        accumulate(n.b, Mat(-(g.cwiseProduct(n.value).cwiseQuotient(xb))));
                }
                break;
            }
            case Op::MatMul: {
                if (wants(n.a)) accumulate(n.a, Mat(g * val(n.b).transpose()));
                if (wants(n.b)) accumulate(n.b, Mat(val(n.a).transpose() * g));
                break;
            }
            case Op::Neg:
                if (wants(n.a)) accumulate(n.a, Mat(-g));
                break;
            case Op::Sum:
                if (wants(n.a)) {
                    const Mat& xa = val(n.a);
                    accumulate(n.a, Mat::Constant(xa.rows(), xa.cols(), g(0, 0)));
                }
                break;
            case Op::ColSum:
                if (wants(n.a)) {
                    const Mat& xa = val(n.a);
                    accumulate(n.a, Mat(Mat::Ones(xa.rows(), 1) * g));
                }
                break;
            case Op::RowSum:
                if (wants(n.a)) {
                    const Mat& xa = val(n.a);
                    accumulate(n.a, Mat(g * Mat::Ones(1, xa.cols())));
                }
                break;
            case Op::VCat: {
                Eigen::Index at = 0;
                for (NodeId p : n.parts) {
                    const Eigen::Index r = val(p).rows();
                    if (wants(p)) accumulate(p, Mat(g.middleRows(at, r)));
                    at += r;
                }
                break;
            }
            case Op::HCat: {
                Eigen::Index at = 0;
                for (NodeId p : n.parts) {
                    const Eigen::Index c = val(p).cols();
                    if (wants(p)) accumulate(p, Mat(g.middleCols(at, c)));
                    at += c;
                }
                break;
            }
            case Op::Cos:
                if (wants(n.a)) accumulate(n.a, Mat(-val(n.a).array().sin() * g.array()));
                break;
            case Op::Exp:
                if (wants(n.a)) accumulate(n.a, Mat(g.cwiseProduct(n.value)));
                break;
            case Op::Log:
                if (wants(n.a)) accumulate(n.a, Mat(g.cwiseQuotient(val(n.a))));
                break;
            case Op::Softplus:
                if (wants(n.a)) {
                    Mat s = val(n.a).unaryExpr([](double x) { return sigmoid(x); });
                    accumulate(n.a, Mat(g.cwiseProduct(s)));
                }
                break;
            case Op::ClampMin:
                if (wants(n.a)) {
                    const double thr = n.aux;
                    Mat mask = val(n.a).unaryExpr([thr](double x) { return x >= thr ? 1.0 : 0.0; });
                    accumulate(n.a, Mat(g.cwiseProduct(mask)));
                }
                break;
            case Op::Scale:
                if (wants(n.a)) accumulate(n.a, Mat(g * n.aux));
                break;
            case Op::Transpose:
                if (wants(n.a)) accumulate(n.a, Mat(g.transpose()));
                break;
            case Op::AddRowVec:
                if (wants(n.a)) accumulate(n.a, g);
                if (wants(n.b)) accumulate(n.b, Mat(g.colwise().sum()));
                break;
            case Op::AddColVec:
                if (wants(n.a)) accumulate(n.a, g);
                if (wants(n.b)) accumulate(n.b, Mat(g.rowwise().sum()));
                break;
            case Op::DivRowVec: {
                const Mat& v = val(n.b);
                if (wants(n.a)) accumulate(n.a, Mat(g.array().rowwise() / v.row(0).array()));
                if (wants(n.b)) {
                    Mat gv = -(g.cwiseProduct(n.value)).colwise().sum();
                    gv.array() /= v.row(0).array();
                    accumulate(n.b, gv);
                }
                break;
            }
            case Op::GatherCols: {
                if (wants(n.a)) {
                    Node& pa = nodes_[n.a.v];
                    Mat& ga = adj(pa);
                    for (std::size_t k = 0; k < n.idx.size(); ++k)
                        ga.col(n.idx[k]) += g.col(static_cast<Eigen::Index>(k));
                }
                break;
            }
        }
    }
};

// Max over coordinates of |autodiff - central difference| / (|central difference| + 1e-8).
// `build` must construct the same scalar function for any leaf values; leaves are
// created as params with the given shapes, filled row-major from `point`.
inline double grad_check(
    const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& build,
    const std::vector<std::pair<Eigen::Index, Eigen::Index>>& shapes,
    std::vector<double> point, double step = 1e-5) {
    const auto bind = [&](const std::vector<double>& flat, Tape& tape) {
        std::vector<NodeId> leaves;
        std::size_t at = 0;
        for (const auto& [r, c] : shapes) {
            Mat m(r, c);
            for (Eigen::Index i = 0; i < r; ++i)
                for (Eigen::Index j = 0; j < c; ++j) m(i, j) = flat[at++];
            leaves.push_back(tape.param(std::move(m)));
        }
        return leaves;
    };
    const auto eval = [&](const std::vector<double>& flat) {
        Tape tape;
        std::vector<NodeId> leaves = bind(flat, tape);
        return tape.value(build(tape, leaves))(0, 0);
    };

    Tape tape;
    std::vector<NodeId> leaves = bind(point, tape);
    NodeId root = build(tape, leaves);
    tape.backward(root);
    std::vector<double> auto_grad;
    for (NodeId leaf : leaves) {
        const Mat g = tape.grad(leaf);
        for (Eigen::Index i = 0; i < g.rows(); ++i)
            for (Eigen::Index j = 0; j < g.cols(); ++j) auto_grad.push_back(g(i, j));
    }

    double worst = 0.0;
    for (std::size_t k = 0; k < point.size(); ++k) {
        const double saved = point[k];
        point[k] = saved + step;
        const double up = eval(point);
        point[k] = saved - step;
        const double down = eval(point);
        point[k] = saved;
        const double fd = (up - down) / (2.0 * step);
        worst = std::max(worst, std::abs(auto_grad[k] - fd) / (std::abs(fd) + 1e-8));
    }
    return worst;
}

inline double grad_check(const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& build,
                         std::vector<double> point, double step = 1e-5) {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes(point.size(), {1, 1});
    return grad_check(build, shapes, std::move(point), step);
}

}  // namespace dapp::ad
