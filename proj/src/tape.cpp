#include "hodsm/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace hodsm::ad {

namespace {

void check_broadcast(const Mat& a, const Mat& b) {
    const bool rows_ok = a.rows() == b.rows() || a.rows() == 1 || b.rows() == 1;
    const bool cols_ok = a.cols() == b.cols() || a.cols() == 1 || b.cols() == 1;
    if (!rows_ok || !cols_ok) throw std::invalid_argument("tape: incompatible shapes");
}

template <typename F>
Mat broadcast_binary(const Mat& a, const Mat& b, F&& f) {
    check_broadcast(a, b);
    if (a.rows() == b.rows() && a.cols() == b.cols()) {
        Mat out(a.rows(), a.cols());
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            for (Eigen::Index i = 0; i < a.rows(); ++i) out(i, j) = f(a(i, j), b(i, j));
        return out;
    }
    const Eigen::Index rows = std::max(a.rows(), b.rows());
    const Eigen::Index cols = std::max(a.cols(), b.cols());
    Mat out(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        const Eigen::Index ja = a.cols() == 1 ? 0 : j;
        const Eigen::Index jb = b.cols() == 1 ? 0 : j;
        for (Eigen::Index i = 0; i < rows; ++i) {
            const Eigen::Index ia = a.rows() == 1 ? 0 : i;
            const Eigen::Index ib = b.rows() == 1 ? 0 : i;
            out(i, j) = f(a(ia, ja), b(ib, jb));
        }
    }
    return out;
}

} // namespace

NodeId Tape::push(Op op, NodeId a, NodeId b, Mat v, double c, int i0, int i1) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.c = c;
    n.i0 = i0;
    n.i1 = i1;
    n.val = std::move(v);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::add(NodeId a, NodeId b) {
    return push(Op::Add, a, b, broadcast_binary(val(a), val(b), [](double x, double y) { return x + y; }));
}

NodeId Tape::sub(NodeId a, NodeId b) {
    return push(Op::Sub, a, b, broadcast_binary(val(a), val(b), [](double x, double y) { return x - y; }));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    return push(Op::Mul, a, b, broadcast_binary(val(a), val(b), [](double x, double y) { return x * y; }));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    if (val(a).cols() != val(b).rows()) throw std::invalid_argument("matmul: shape mismatch");
    return push(Op::MatMul, a, b, val(a) * val(b));
}

NodeId Tape::matmul_nt(NodeId a, NodeId b) {
    if (val(a).cols() != val(b).cols()) throw std::invalid_argument("matmul_nt: shape mismatch");
    return push(Op::MatMulNT, a, b, val(a) * val(b).transpose());
}

NodeId Tape::matmul_tn(NodeId a, NodeId b) {
    if (val(a).rows() != val(b).rows()) throw std::invalid_argument("matmul_tn: shape mismatch");
    return push(Op::MatMulTN, a, b, val(a).transpose() * val(b));
}

NodeId Tape::scale(NodeId a, double c) { return push(Op::Scale, a, kNoNode, c * val(a), c); }

NodeId Tape::add_scalar(NodeId a, double c) {
    return push(Op::AddScalar, a, kNoNode, val(a).array() + c, c);
}

NodeId Tape::tanh(NodeId a) { return push(Op::Tanh, a, kNoNode, val(a).array().tanh()); }

NodeId Tape::sigmoid(NodeId a) {
    Mat v = (1.0 / (1.0 + (-val(a)).array().exp())).matrix();
    return push(Op::Sigmoid, a, kNoNode, std::move(v));
}

NodeId Tape::sin(NodeId a) { return push(Op::Sin, a, kNoNode, val(a).array().sin()); }
NodeId Tape::cos(NodeId a) { return push(Op::Cos, a, kNoNode, val(a).array().cos()); }
NodeId Tape::exp(NodeId a) { return push(Op::Exp, a, kNoNode, val(a).array().exp()); }

NodeId Tape::row_sum(NodeId a) { return push(Op::RowSum, a, kNoNode, val(a).rowwise().sum()); }
NodeId Tape::col_sum(NodeId a) { return push(Op::ColSum, a, kNoNode, val(a).colwise().sum()); }

NodeId Tape::sum_all(NodeId a) {
    return push(Op::SumAll, a, kNoNode, Mat::Constant(1, 1, val(a).sum()));
}

NodeId Tape::concat_cols(NodeId a, NodeId b) {
    if (val(a).rows() != val(b).rows()) throw std::invalid_argument("concat_cols: row mismatch");
    Mat v(val(a).rows(), val(a).cols() + val(b).cols());
    v << val(a), val(b);
    return push(Op::ConcatCols, a, b, std::move(v));
}

NodeId Tape::slice_cols(NodeId a, int begin, int count) {
    if (begin < 0 || count < 0 || begin + count > val(a).cols())
        throw std::invalid_argument("slice_cols: out of range");
    return push(Op::SliceCols, a, kNoNode, val(a).middleCols(begin, count), 0.0, begin, count);
}

NodeId Tape::log_sum_exp(NodeId a) {
    const Mat& x = val(a);
    Mat out(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double m = x.row(i).maxCoeff();
        out(i, 0) = m + std::log((x.row(i).array() - m).exp().sum());
    }
    return push(Op::LogSumExp, a, kNoNode, std::move(out));
}

NodeId Tape::stop_gradient(NodeId a) { return push(Op::StopGrad, a, kNoNode, val(a)); }

std::pair<NodeId, NodeId> Tape::swish_with_deriv(NodeId a) {
    const NodeId sg = sigmoid(a);
    const NodeId y = mul(a, sg);
    // d/dx (x*sigmoid(x)) = sigmoid(x) * (1 + x*(1 - sigmoid(x)))
    const NodeId one_minus = add_scalar(neg(sg), 1.0);
    const NodeId d = mul(sg, add_scalar(mul(a, one_minus), 1.0));
    return {y, d};
}

NodeId Tape::squared_norm_rows(NodeId a) { return row_sum(mul(a, a)); }
NodeId Tape::dot_rows(NodeId a, NodeId b) { return row_sum(mul(a, b)); }

NodeId Tape::mean_all(NodeId a) {
    const double n = static_cast<double>(val(a).size());
    return scale(sum_all(a), 1.0 / n);
}

NodeId Tape::reduce_to_shape(NodeId g, Eigen::Index rows, Eigen::Index cols) {
    NodeId r = g;
    if (val(r).rows() != rows) {
        if (rows != 1) throw std::logic_error("reduce_to_shape: bad rows");
        r = col_sum(r);
    }
    if (val(r).cols() != cols) {
        if (cols != 1) throw std::logic_error("reduce_to_shape: bad cols");
        r = row_sum(r);
    }
    return r;
}

NodeId Tape::backward_rule(NodeId id, int which, NodeId grad_out) {
    // Copy scalars up front: emitting nodes below may reallocate nodes_.
    const Op op = nodes_[id].op;
    const NodeId a = nodes_[id].a, b = nodes_[id].b;
    const double c = nodes_[id].c;
    const int i0 = nodes_[id].i0, i1 = nodes_[id].i1;
    switch (op) {
    case Op::Add: {
        const NodeId o = which == 0 ? a : b;
        return reduce_to_shape(grad_out, val(o).rows(), val(o).cols());
    }
    case Op::Sub: {
        const NodeId o = which == 0 ? a : b;
        const NodeId g = which == 0 ? grad_out : neg(grad_out);
        return reduce_to_shape(g, val(o).rows(), val(o).cols());
    }
    case Op::Mul: {
        const NodeId o = which == 0 ? a : b;
        const NodeId other = which == 0 ? b : a;
        return reduce_to_shape(mul(grad_out, other), val(o).rows(), val(o).cols());
    }
    case Op::MatMul:
        return which == 0 ? matmul_nt(grad_out, b) : matmul_tn(a, grad_out);
    case Op::MatMulNT:
        return which == 0 ? matmul(grad_out, b) : matmul_tn(grad_out, a);
    case Op::MatMulTN:
        return which == 0 ? matmul_nt(b, grad_out) : matmul(a, grad_out);
    case Op::Scale:
        return scale(grad_out, c);
    case Op::AddScalar:
        return grad_out;
    case Op::Tanh: {
        const NodeId y2 = mul(id, id);
        return mul(grad_out, add_scalar(neg(y2), 1.0));
    }
    case Op::Sigmoid: {
        const NodeId d = mul(id, add_scalar(neg(id), 1.0));
        return mul(grad_out, d);
    }
    case Op::Sin:
        return mul(grad_out, cos(a));
    case Op::Cos:
        return neg(mul(grad_out, sin(a)));
    case Op::Exp:
        return mul(grad_out, id);
    case Op::RowSum: {
        const NodeId ones = constant(Mat::Ones(1, val(a).cols()));
        return mul(grad_out, ones);
    }
    case Op::ColSum: {
        const NodeId ones = constant(Mat::Ones(val(a).rows(), 1));
        return mul(ones, grad_out);
    }
    case Op::SumAll: {
        const NodeId ones = constant(Mat::Ones(val(a).rows(), val(a).cols()));
        return mul(grad_out, ones);
    }
    case Op::ConcatCols: {
        const int ca = static_cast<int>(val(a).cols());
        return which == 0 ? slice_cols(grad_out, 0, ca)
                          : slice_cols(grad_out, ca, static_cast<int>(val(b).cols()));
    }
    case Op::SliceCols: {
        const int total = static_cast<int>(val(a).cols());
        const Eigen::Index arows = val(a).rows();
        NodeId g = grad_out;
        if (i0 > 0) {
            const NodeId left = constant(Mat::Zero(arows, i0));
            g = concat_cols(left, g);
        }
        const int right = total - i0 - i1;
        if (right > 0) {
            const NodeId r = constant(Mat::Zero(arows, right));
            g = concat_cols(g, r);
        }
        return g;
    }
    case Op::LogSumExp: {
        const NodeId soft = exp(sub(a, id)); // softmax via broadcast of the rowwise lse
        return mul(grad_out, soft);
    }
    default:
        throw std::logic_error("backward_rule: op has no rule");
    }
}

std::vector<NodeId> Tape::backward(std::span<const std::pair<NodeId, NodeId>> seeds,
                                   std::span<const NodeId> wrt) {
    const size_t n0 = nodes_.size();
    std::vector<uint8_t> active(n0, 0);
    for (NodeId w : wrt) {
        if (w < 0 || static_cast<size_t>(w) >= n0) throw std::invalid_argument("backward: bad wrt");
        active[w] = 1;
    }
    for (size_t i = 0; i < n0; ++i) {
        const Node& n = nodes_[i];
        if (n.op == Op::StopGrad || n.op == Op::Leaf || n.op == Op::Const) continue;
        if ((n.a != kNoNode && active[n.a]) || (n.b != kNoNode && active[n.b])) active[i] = 1;
    }

    std::vector<NodeId> adj(n0, kNoNode);
    NodeId top = -1;
    for (const auto& [out, cot] : seeds) {
        if (out < 0 || static_cast<size_t>(out) >= n0)
            throw std::invalid_argument("backward: bad seed");
        if (!active[out]) continue;
        adj[out] = adj[out] == kNoNode ? cot : add(adj[out], cot);
        top = std::max(top, out);
    }

    for (NodeId i = top; i >= 0; --i) {
        if (adj[i] == kNoNode) continue;
        const Op op = nodes_[i].op;
        const NodeId na = nodes_[i].a, nb = nodes_[i].b;
        if (op == Op::Leaf || op == Op::Const || op == Op::StopGrad) continue;
        if (na != kNoNode && active[na]) {
            const NodeId g = backward_rule(i, 0, adj[i]);
            adj[na] = adj[na] == kNoNode ? g : add(adj[na], g);
        }
        if (nb != kNoNode && active[nb]) {
            const NodeId g = backward_rule(i, 1, adj[i]);
            adj[nb] = adj[nb] == kNoNode ? g : add(adj[nb], g);
        }
    }

    std::vector<NodeId> out;
    out.reserve(wrt.size());
    for (NodeId w : wrt) out.push_back(adj[w]);
    return out;
}

std::vector<NodeId> Tape::grad(NodeId out, std::span<const NodeId> wrt) {
    if (val(out).size() != 1) throw std::invalid_argument("grad: output must be scalar");
    const NodeId seed = constant(1.0);
    const std::pair<NodeId, NodeId> s{out, seed};
    auto adj = backward(std::span(&s, 1), wrt);
    for (size_t i = 0; i < adj.size(); ++i)
        if (adj[i] == kNoNode)
            adj[i] = constant(Mat::Zero(val(wrt[i]).rows(), val(wrt[i]).cols()));
    return adj;
}

NodeId Tape::grad1(NodeId out, NodeId wrt) { return grad(out, std::span(&wrt, 1))[0]; }

NodeId Tape::vjp(NodeId output, NodeId cotangent, NodeId wrt) {
    if (val(output).rows() != val(cotangent).rows() || val(output).cols() != val(cotangent).cols())
        throw std::invalid_argument("vjp: cotangent shape mismatch");
    const std::pair<NodeId, NodeId> s{output, cotangent};
    auto adj = backward(std::span(&s, 1), std::span(&wrt, 1));
    if (adj[0] == kNoNode) return constant(Mat::Zero(val(wrt).rows(), val(wrt).cols()));
    return adj[0];
}

// ---- Dual (forward-mode) helpers ----

namespace {

NodeId match_shape(Tape& t, NodeId tan, NodeId primal_result) {
    // Broadcast an undersized tangent up to the primal result's shape.
    const Mat& tv = t.val(tan);
    const Mat& pv = t.val(primal_result);
    if (tv.rows() == pv.rows() && tv.cols() == pv.cols()) return tan;
    return t.mul(tan, t.constant(Mat::Ones(pv.rows(), pv.cols())));
}

} // namespace

Dual dual_add(Tape& t, const Dual& a, const Dual& b) {
    Dual r;
    r.primal = t.add(a.primal, b.primal);
    if (a.has_tangent() && b.has_tangent()) r.tangent = t.add(a.tangent, b.tangent);
    else if (a.has_tangent()) r.tangent = match_shape(t, a.tangent, r.primal);
    else if (b.has_tangent()) r.tangent = match_shape(t, b.tangent, r.primal);
    return r;
}

Dual dual_sub(Tape& t, const Dual& a, const Dual& b) {
    Dual r;
    r.primal = t.sub(a.primal, b.primal);
    if (a.has_tangent() && b.has_tangent()) r.tangent = t.sub(a.tangent, b.tangent);
    else if (a.has_tangent()) r.tangent = match_shape(t, a.tangent, r.primal);
    else if (b.has_tangent()) r.tangent = match_shape(t, t.neg(b.tangent), r.primal);
    return r;
}

Dual dual_mul(Tape& t, const Dual& a, const Dual& b) {
    Dual r;
    r.primal = t.mul(a.primal, b.primal);
    NodeId tan = kNoNode;
    if (a.has_tangent()) tan = t.mul(a.tangent, b.primal);
    if (b.has_tangent()) {
        const NodeId t2 = t.mul(a.primal, b.tangent);
        tan = tan == kNoNode ? t2 : t.add(tan, t2);
    }
    if (tan != kNoNode) tan = match_shape(t, tan, r.primal);
    r.tangent = tan;
    return r;
}

Dual dual_matmul(Tape& t, const Dual& a, const Dual& b) {
    Dual r;
    r.primal = t.matmul(a.primal, b.primal);
    NodeId tan = kNoNode;
    if (a.has_tangent()) tan = t.matmul(a.tangent, b.primal);
    if (b.has_tangent()) {
        const NodeId t2 = t.matmul(a.primal, b.tangent);
        tan = tan == kNoNode ? t2 : t.add(tan, t2);
    }
    r.tangent = tan;
    return r;
}

Dual dual_scale(Tape& t, const Dual& a, double c) {
    return {t.scale(a.primal, c), a.has_tangent() ? t.scale(a.tangent, c) : kNoNode};
}

Dual dual_add_scalar(Tape& t, const Dual& a, double c) {
    return {t.add_scalar(a.primal, c), a.tangent};
}

Dual dual_tanh(Tape& t, const Dual& a) {
    Dual r;
    r.primal = t.tanh(a.primal);
    if (a.has_tangent()) {
        const NodeId d = t.add_scalar(t.neg(t.mul(r.primal, r.primal)), 1.0);
        r.tangent = t.mul(a.tangent, d);
    }
    return r;
}

Dual dual_sigmoid(Tape& t, const Dual& a) {
    Dual r;
    r.primal = t.sigmoid(a.primal);
    if (a.has_tangent()) {
        const NodeId d = t.mul(r.primal, t.add_scalar(t.neg(r.primal), 1.0));
        r.tangent = t.mul(a.tangent, d);
    }
    return r;
}

Dual dual_swish(Tape& t, const Dual& a) {
    auto [y, d] = t.swish_with_deriv(a.primal);
    Dual r;
    r.primal = y;
    if (a.has_tangent()) r.tangent = t.mul(a.tangent, d);
    return r;
}

Dual dual_sin(Tape& t, const Dual& a) {
    Dual r;
    r.primal = t.sin(a.primal);
    if (a.has_tangent()) r.tangent = t.mul(a.tangent, t.cos(a.primal));
    return r;
}

Dual dual_cos(Tape& t, const Dual& a) {
    Dual r;
    r.primal = t.cos(a.primal);
    if (a.has_tangent()) r.tangent = t.neg(t.mul(a.tangent, t.sin(a.primal)));
    return r;
}

Dual dual_row_sum(Tape& t, const Dual& a) {
    return {t.row_sum(a.primal), a.has_tangent() ? t.row_sum(a.tangent) : kNoNode};
}

Dual dual_sum_all(Tape& t, const Dual& a) {
    return {t.sum_all(a.primal), a.has_tangent() ? t.sum_all(a.tangent) : kNoNode};
}

Dual dual_stop_gradient(Tape& t, const Dual& a) {
    return {t.stop_gradient(a.primal), kNoNode};
}

} // namespace hodsm::ad
