#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace hodsm::ad {

using Mat = Eigen::MatrixXd;
using NodeId = int32_t;
inline constexpr NodeId kNoNode = -1;

enum class Op : uint8_t {
    Leaf,     // differentiable input (parameter or data point)
    Const,    // non-differentiable value
    Add, Sub, Mul,          // elementwise, with row/col broadcasting
    MatMul,   // a * b
    MatMulNT, // a * b^T
    MatMulTN, // a^T * b
    Scale,    // scalar * a
    AddScalar,
    Tanh, Sigmoid, Sin, Cos, Exp,
    RowSum,   // B x K -> B x 1
    ColSum,   // B x K -> 1 x K
    SumAll,   // -> 1 x 1
    ConcatCols,
    SliceCols,
    LogSumExp, // rowwise, B x K -> B x 1
    StopGrad,
};

// Append-only computation graph over batch matrices. Values are computed
// eagerly (define-by-run). The adjoint pass emits ordinary nodes, so the
// result of backward() is itself differentiable; nesting reverse over
// forward passes needs no special casing.
class Tape {
public:
    struct Node {
        Op op;
        NodeId a = kNoNode, b = kNoNode;
        double c = 0.0; // Scale / AddScalar coefficient
        int i0 = 0, i1 = 0; // SliceCols [i0, i0+i1)
        Mat val;
    };

    NodeId leaf(Mat v) { return push(Op::Leaf, kNoNode, kNoNode, std::move(v)); }
    NodeId constant(Mat v) { return push(Op::Const, kNoNode, kNoNode, std::move(v)); }
    NodeId constant(double v) { return constant(Mat::Constant(1, 1, v)); }

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId matmul(NodeId a, NodeId b);
    NodeId matmul_nt(NodeId a, NodeId b);
    NodeId matmul_tn(NodeId a, NodeId b);
    NodeId scale(NodeId a, double c);
    NodeId add_scalar(NodeId a, double c);
    NodeId neg(NodeId a) { return scale(a, -1.0); }
    NodeId tanh(NodeId a);
    NodeId sigmoid(NodeId a);
    NodeId sin(NodeId a);
    NodeId cos(NodeId a);
    NodeId exp(NodeId a);
    NodeId row_sum(NodeId a);
    NodeId col_sum(NodeId a);
    NodeId sum_all(NodeId a);
    NodeId concat_cols(NodeId a, NodeId b);
    NodeId slice_cols(NodeId a, int begin, int count);
    NodeId log_sum_exp(NodeId a);
    NodeId stop_gradient(NodeId a);

    // x * sigmoid(x), built from primitives; returns (y, dy/dx) nodes since
    // tangent propagation reuses the derivative.
    std::pair<NodeId, NodeId> swish_with_deriv(NodeId a);
    NodeId swish(NodeId a) { return swish_with_deriv(a).first; }

    NodeId squared_norm_rows(NodeId a); // rowwise ||.||^2, B x 1
    NodeId dot_rows(NodeId a, NodeId b); // rowwise inner product, B x 1
    NodeId mean_all(NodeId a);

    const Mat& val(NodeId id) const { return nodes_[id].val; }
    const Node& node(NodeId id) const { return nodes_[id]; }
    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Reverse sweep. Seeds are (node, cotangent-node) pairs; wrt lists the
    // leaves whose adjoints are requested. Visits each node at most once in
    // reverse topological (= id) order. Returns one adjoint node per wrt
    // entry, kNoNode when the output does not depend on it.
    std::vector<NodeId> backward(std::span<const std::pair<NodeId, NodeId>> seeds,
                                 std::span<const NodeId> wrt);

    // Gradient of a scalar (1x1) node.
    std::vector<NodeId> grad(NodeId out, std::span<const NodeId> wrt);
    NodeId grad1(NodeId out, NodeId wrt);

    // vjp over the subgraph producing `output`: cotangent^T * d(output)/d(wrt).
    NodeId vjp(NodeId output, NodeId cotangent, NodeId wrt);

private:
    NodeId push(Op op, NodeId a, NodeId b, Mat v, double c = 0.0, int i0 = 0, int i1 = 0);
    // Adjoint contribution of `grad_out` into operand `which` (0=a, 1=b) of node `id`.
    NodeId backward_rule(NodeId id, int which, NodeId grad_out);
    NodeId reduce_to_shape(NodeId g, Eigen::Index rows, Eigen::Index cols);

    std::vector<Node> nodes_;
};

// Forward-mode value: primal plus optional tangent (absent = structurally
// zero). Tangent nodes are ordinary tape nodes, so jvp outputs stay
// differentiable.
struct Dual {
    NodeId primal = kNoNode;
    NodeId tangent = kNoNode; // kNoNode == zero

    bool has_tangent() const { return tangent != kNoNode; }
};

Dual dual_add(Tape& t, const Dual& a, const Dual& b);
Dual dual_sub(Tape& t, const Dual& a, const Dual& b);
Dual dual_mul(Tape& t, const Dual& a, const Dual& b);
Dual dual_matmul(Tape& t, const Dual& a, const Dual& b);
Dual dual_scale(Tape& t, const Dual& a, double c);
Dual dual_add_scalar(Tape& t, const Dual& a, double c);
Dual dual_tanh(Tape& t, const Dual& a);
Dual dual_sigmoid(Tape& t, const Dual& a);
Dual dual_swish(Tape& t, const Dual& a);
Dual dual_sin(Tape& t, const Dual& a);
Dual dual_cos(Tape& t, const Dual& a);
Dual dual_row_sum(Tape& t, const Dual& a);
Dual dual_sum_all(Tape& t, const Dual& a);
Dual dual_stop_gradient(Tape& t, const Dual& a);

} // namespace hodsm::ad
