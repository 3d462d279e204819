#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "hodsm/schedule.hpp"
#include "hodsm/score_model.hpp"

namespace hodsm {

// One training batch, stored column-batched: row i of each matrix belongs to
// sample i. x_t = alpha_t x0 + sigma_t eps holds exactly by construction.
struct Batch {
    Eigen::MatrixXd x0, eps, x_t; // B x d
    Eigen::VectorXd t, alpha, sigma; // B

    Eigen::Index size() const { return x0.rows(); }
    int dim() const { return static_cast<int>(x0.cols()); }
};

enum class LossMode { Exact, Estimated };

struct LossBreakdown {
    double j1 = 0, j2 = 0, j2_trace = 0, j3 = 0;
    double total = 0;
    double lambda1 = 0, lambda2 = 0;
};

struct LossNodes {
    ad::NodeId j1 = ad::kNoNode;
    ad::NodeId j2 = ad::kNoNode;
    ad::NodeId j2_trace = ad::kNoNode;
    ad::NodeId j3 = ad::kNoNode;
    ad::NodeId total = ad::kNoNode;
};

// Builds the combined objective J1 + lambda1 (J2 + J2tr) + lambda2 J3 on the
// tape. All objectives are dimension-normalized. Lower-order estimates inside
// the high-order terms are stop-gradient copies. Orders with zero weight are
// skipped. `probes` (B x d, identity covariance rows) is required in
// estimated mode.
LossNodes build_total_loss(ad::Tape& tape, const ScoreModel& model,
                           const ScoreModel::Leaves& leaves, const Batch& batch,
                           const DiffusionSchedule& sched, double lambda1, double lambda2,
                           LossMode mode, const Eigen::MatrixXd* probes = nullptr);

LossBreakdown read_breakdown(const ad::Tape& tape, const LossNodes& nodes, double lambda1,
                             double lambda2);

// Value-level loss formulas, shared by tests and analytic-score oracles.
// Per-sample inputs follow the batched row convention of Batch.
namespace lossval {

// l1 = sigma * s1_hat + eps (per row)
Eigen::MatrixXd ell1(const Eigen::MatrixXd& s1_hat, const Eigen::MatrixXd& eps,
                     const Eigen::VectorXd& sigma);
// l2 = sigma^2 * s2_hat + I (single sample)
Eigen::MatrixXd ell2(const Eigen::MatrixXd& s2_hat, double sigma);
// l3 = (||l1||^2 I - tr(l2) I - 2 l2) l1 (single sample)
Eigen::VectorXd ell3(const Eigen::VectorXd& l1, const Eigen::MatrixXd& l2);

// First-order objective mean: ||sigma s + eps||^2 / d.
double loss_first(const Eigen::MatrixXd& s, const Eigen::MatrixXd& eps,
                  const Eigen::VectorXd& sigma);

// Exact forms for a single sample (J given explicitly).
double loss_second_exact(const Eigen::MatrixXd& jac, const Eigen::VectorXd& l1, double sigma,
                         int dim);
double loss_second_trace_exact(double trace, const Eigen::VectorXd& l1, double sigma, int dim);
double loss_third_exact(const Eigen::VectorXd& grad_trace, const Eigen::VectorXd& l3, double sigma,
                        int dim);

// Estimated forms for a single sample and probe v.
double loss_second_est(const Eigen::VectorXd& s_jvp, const Eigen::VectorXd& l1,
                       const Eigen::VectorXd& v, double sigma, int dim);
double loss_second_trace_est(const Eigen::VectorXd& s_jvp, const Eigen::VectorXd& l1,
                             const Eigen::VectorXd& v, double sigma, int dim);
double loss_third_est(const Eigen::VectorXd& vjp, const Eigen::VectorXd& s_jvp_hat,
                      const Eigen::VectorXd& l1, const Eigen::VectorXd& v, double sigma, int dim);

} // namespace lossval

} // namespace hodsm
