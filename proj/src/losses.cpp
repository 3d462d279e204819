#include "hodsm/losses.hpp"

#include <stdexcept>

namespace hodsm {

using ad::kNoNode;
using ad::Mat;
using ad::NodeId;
using ad::Tape;

namespace {

// mean over batch of a B x 1 column, divided by dim
NodeId batch_mean(Tape& t, NodeId col, Eigen::Index batch, int dim) {
    return t.scale(t.sum_all(col), 1.0 / (static_cast<double>(batch) * dim));
}

} // namespace

LossNodes build_total_loss(Tape& tape, const ScoreModel& model,
                           const ScoreModel::Leaves& leaves, const Batch& batch,
                           const DiffusionSchedule& sched, double lambda1, double lambda2,
                           LossMode mode, const Eigen::MatrixXd* probes) {
    if (lambda1 < 0 || lambda2 < 0)
        throw std::invalid_argument("total_loss: lambda weights must be nonnegative");
    const int d = batch.dim();
    const Eigen::Index B = batch.size();
    const bool need_high = lambda1 > 0 || lambda2 > 0;
    if (mode == LossMode::Exact && d > ScoreModel::kExactDimLimit && need_high)
        throw std::invalid_argument("total_loss: exact mode limited to dim <= 4");
    if (mode == LossMode::Estimated && need_high && probes == nullptr)
        throw std::invalid_argument("total_loss: estimated mode requires probe vectors");

    std::vector<Mat> dirs;
    if (need_high) {
        if (mode == LossMode::Exact) {
            for (int k = 0; k < d; ++k) {
                Mat e = Mat::Zero(B, d);
                e.col(k).setOnes();
                dirs.push_back(e);
            }
        } else {
            dirs.push_back(*probes);
        }
    }

    const ScoreModel::Eval ev = model.build(tape, leaves, batch.x_t, batch.t, sched, dirs);

    const NodeId sigma = tape.constant(Mat(batch.sigma));
    const NodeId sigma2 = tape.constant(Mat(batch.sigma.array().square().matrix()));
    const NodeId sigma3 = tape.constant(Mat(batch.sigma.array().cube().matrix()));
    const NodeId eps = tape.constant(batch.eps);

    LossNodes out;

    // J1 = E ||sigma s + eps||^2 / d
    const NodeId r1 = tape.add(tape.mul(sigma, ev.s), eps);
    out.j1 = batch_mean(tape, tape.squared_norm_rows(r1), B, d);

    NodeId total = out.j1;
    if (!need_high) {
        out.total = total;
        return out;
    }

    // l1 = sigma s1_hat + eps with s1_hat = stop_gradient(s)
    const NodeId s1_hat = tape.stop_gradient(ev.s);
    const NodeId l1 = tape.add(tape.mul(sigma, s1_hat), eps);
    const NodeId l1_sq = tape.squared_norm_rows(l1); // B x 1

    if (mode == LossMode::Exact) {
        // J2: Frobenius norm via columns, M e_k = sigma^2 J e_k + e_k - l1 l1_k
        NodeId fro = kNoNode;
        NodeId trace = kNoNode;
        for (int k = 0; k < d; ++k) {
            const NodeId jk = ev.s_jvp[k];
            const NodeId l1k = tape.slice_cols(l1, k, 1);
            Mat ek = Mat::Zero(1, d);
            ek(0, k) = 1.0;
            NodeId col = tape.sub(tape.add(tape.mul(sigma2, jk), tape.constant(ek)),
                                  tape.mul(l1, l1k));
            const NodeId nk = tape.squared_norm_rows(col);
            fro = fro == kNoNode ? nk : tape.add(fro, nk);
            const NodeId diag = tape.slice_cols(jk, k, 1);
            trace = trace == kNoNode ? diag : tape.add(trace, diag);
        }
        out.j2 = batch_mean(tape, fro, B, d);

        // J2tr: |sigma^2 tr J + d - ||l1||^2|^2
        const NodeId r2t = tape.sub(tape.add_scalar(tape.mul(sigma2, trace), d), l1_sq);
        out.j2_trace = batch_mean(tape, tape.mul(r2t, r2t), B, d);

        if (lambda2 > 0) {
            // grad of trace w.r.t. x, kept differentiable by the recorded sweep
            const NodeId ones = tape.constant(Mat::Ones(B, 1));
            const NodeId gtr = tape.vjp(trace, ones, ev.x);

            // l2 columns from the stop-gradient jacobian; l3 assembled columnwise
            const NodeId tr_hat = tape.stop_gradient(trace);
            const NodeId trl2 = tape.add_scalar(tape.mul(sigma2, tr_hat), d); // B x 1
            NodeId l2l1 = kNoNode; // (l2 l1) rows
            for (int k = 0; k < d; ++k) {
                const NodeId jk_hat = tape.stop_gradient(ev.s_jvp[k]);
                Mat ek = Mat::Zero(1, d);
                ek(0, k) = 1.0;
                const NodeId l2col = tape.add(tape.mul(sigma2, jk_hat), tape.constant(ek));
                const NodeId l1k = tape.slice_cols(l1, k, 1);
                const NodeId contrib = tape.mul(l2col, l1k);
                l2l1 = l2l1 == kNoNode ? contrib : tape.add(l2l1, contrib);
            }
            const NodeId coeff = tape.sub(l1_sq, trl2); // ||l1||^2 - tr(l2), B x 1
            const NodeId l3 = tape.sub(tape.mul(coeff, l1), tape.scale(l2l1, 2.0));
            const NodeId r3 = tape.add(tape.mul(sigma3, gtr), l3);
            out.j3 = batch_mean(tape, tape.squared_norm_rows(r3), B, d);
        }
    } else {
        const NodeId v = tape.constant(*probes);
        const NodeId s_jvp = ev.s_jvp[0];
        const NodeId l1v = tape.dot_rows(l1, v);   // B x 1
        const NodeId vsq = tape.constant(Mat(probes->array().square().rowwise().sum().matrix()));

        // J2_est: ||sigma^2 s_jvp + v - (l1.v) l1||^2
        const NodeId r2 = tape.sub(tape.add(tape.mul(sigma2, s_jvp), v), tape.mul(l1v, l1));
        out.j2 = batch_mean(tape, tape.squared_norm_rows(r2), B, d);

        // J2tr_est: |sigma^2 v.s_jvp + ||v||^2 - (l1.v)^2|^2
        const NodeId vjvp = tape.dot_rows(v, s_jvp);
        const NodeId r2t =
            tape.sub(tape.add(tape.mul(sigma2, vjvp), vsq), tape.mul(l1v, l1v));
        out.j2_trace = batch_mean(tape, tape.mul(r2t, r2t), B, d);

        if (lambda2 > 0) {
            const NodeId w = tape.vjp(s_jvp, v, ev.x); // v^T grad_x(s_jvp), live in theta
            const NodeId jvp_hat = tape.stop_gradient(s_jvp);
            const NodeId vjvp_hat = tape.dot_rows(v, jvp_hat);
            const NodeId term1 = tape.mul(tape.mul(l1v, l1v), l1);
            const NodeId term2 = tape.mul(tape.add(tape.mul(sigma2, vjvp_hat), vsq), l1);
            const NodeId term3 = tape.scale(
                tape.mul(l1v, tape.add(tape.mul(sigma2, jvp_hat), v)), 2.0);
            const NodeId r3 =
                tape.sub(tape.sub(tape.add(tape.mul(sigma3, w), term1), term2), term3);
            out.j3 = batch_mean(tape, tape.squared_norm_rows(r3), B, d);
        }
    }

    if (lambda1 > 0)
        total = tape.add(total, tape.scale(tape.add(out.j2, out.j2_trace), lambda1));
    if (lambda2 > 0) total = tape.add(total, tape.scale(out.j3, lambda2));
    out.total = total;
    return out;
}

LossBreakdown read_breakdown(const Tape& tape, const LossNodes& nodes, double lambda1,
                             double lambda2) {
    LossBreakdown b;
    b.lambda1 = lambda1;
    b.lambda2 = lambda2;
    b.j1 = tape.val(nodes.j1)(0, 0);
    if (nodes.j2 != kNoNode) b.j2 = tape.val(nodes.j2)(0, 0);
    if (nodes.j2_trace != kNoNode) b.j2_trace = tape.val(nodes.j2_trace)(0, 0);
    if (nodes.j3 != kNoNode) b.j3 = tape.val(nodes.j3)(0, 0);
    b.total = tape.val(nodes.total)(0, 0);
    return b;
}

namespace lossval {

Eigen::MatrixXd ell1(const Eigen::MatrixXd& s1_hat, const Eigen::MatrixXd& eps,
                     const Eigen::VectorXd& sigma) {
    return (s1_hat.array().colwise() * sigma.array()).matrix() + eps;
}

Eigen::MatrixXd ell2(const Eigen::MatrixXd& s2_hat, double sigma) {
    return sigma * sigma * s2_hat + Eigen::MatrixXd::Identity(s2_hat.rows(), s2_hat.cols());
}

Eigen::VectorXd ell3(const Eigen::VectorXd& l1, const Eigen::MatrixXd& l2) {
    return (l1.squaredNorm() - l2.trace()) * l1 - 2.0 * (l2 * l1);
}

double loss_first(const Eigen::MatrixXd& s, const Eigen::MatrixXd& eps,
                  const Eigen::VectorXd& sigma) {
    const Eigen::MatrixXd r = (s.array().colwise() * sigma.array()).matrix() + eps;
    return r.squaredNorm() / (static_cast<double>(r.rows()) * r.cols());
}

double loss_second_exact(const Eigen::MatrixXd& jac, const Eigen::VectorXd& l1, double sigma,
                         int dim) {
    const Eigen::MatrixXd m = sigma * sigma * jac +
                              Eigen::MatrixXd::Identity(dim, dim) - l1 * l1.transpose();
    return m.squaredNorm() / dim;
}

double loss_second_trace_exact(double trace, const Eigen::VectorXd& l1, double sigma, int dim) {
    const double r = sigma * sigma * trace + dim - l1.squaredNorm();
    return r * r / dim;
}

double loss_third_exact(const Eigen::VectorXd& grad_trace, const Eigen::VectorXd& l3, double sigma,
                        int dim) {
    const Eigen::VectorXd r = sigma * sigma * sigma * grad_trace + l3;
    return r.squaredNorm() / dim;
}

double loss_second_est(const Eigen::VectorXd& s_jvp, const Eigen::VectorXd& l1,
                       const Eigen::VectorXd& v, double sigma, int dim) {
    const Eigen::VectorXd r = sigma * sigma * s_jvp + v - l1.dot(v) * l1;
    return r.squaredNorm() / dim;
}

double loss_second_trace_est(const Eigen::VectorXd& s_jvp, const Eigen::VectorXd& l1,
                             const Eigen::VectorXd& v, double sigma, int dim) {
    const double l1v = l1.dot(v);
    const double r = sigma * sigma * v.dot(s_jvp) + v.squaredNorm() - l1v * l1v;
    return r * r / dim;
}

double loss_third_est(const Eigen::VectorXd& vjp, const Eigen::VectorXd& s_jvp_hat,
                      const Eigen::VectorXd& l1, const Eigen::VectorXd& v, double sigma, int dim) {
    const double l1v = l1.dot(v);
    const double s2 = sigma * sigma;
    const Eigen::VectorXd r = sigma * s2 * vjp + l1v * l1v * l1 -
                              (s2 * v.dot(s_jvp_hat) + v.squaredNorm()) * l1 -
                              2.0 * l1v * (s2 * s_jvp_hat + v);
    return r.squaredNorm() / dim;
}

} // namespace lossval

} // namespace hodsm
