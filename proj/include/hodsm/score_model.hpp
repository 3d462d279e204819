#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "hodsm/schedule.hpp"
#include "hodsm/tape.hpp"

namespace hodsm {

struct ScoreModelConfig {
    int dim = 1;
    int time_frequencies = 32; // embedding width = 2 * frequencies
    int t_hidden = 64;
    int x_hidden = 64;
    int joint_hidden = 128;
};

// MLP score model with noise-prediction parameterization:
// s_theta(x, t) = net(x, t) / sigma_t. The network encodes t through a
// sinusoidal embedding and a two-layer MLP, x through a two-layer MLP, and
// joins both in a two-layer head. Swish activations throughout, so the map
// x -> s(x, t) is smooth to all orders.
class ScoreModel {
public:
    ScoreModel(ScoreModelConfig cfg, uint64_t seed);

    const ScoreModelConfig& config() const { return cfg_; }
    int dim() const { return cfg_.dim; }
    uint64_t init_seed() const { return seed_; }

    int param_count() const;
    Eigen::VectorXd flat_params() const;
    void set_flat_params(const Eigen::VectorXd& theta);

    struct Leaves {
        std::vector<ad::NodeId> ids;
    };
    Leaves make_leaves(ad::Tape& t) const;

    struct Eval {
        ad::NodeId x = ad::kNoNode;   // input leaf, B x d
        ad::NodeId net = ad::kNoNode; // B x d
        ad::NodeId s = ad::kNoNode;   // net / sigma_t
        std::vector<ad::NodeId> s_jvp; // one per requested direction, B x d
    };

    // Builds the batched network graph. X is B x d, tv holds per-row times in
    // [eps_time, T], dirs are tangent directions (each B x d). All outputs are
    // differentiable w.r.t. the leaves and the x input.
    Eval build(ad::Tape& t, const Leaves& lv, const Eigen::MatrixXd& X,
               const Eigen::VectorXd& tv, const DiffusionSchedule& sched,
               const std::vector<Eigen::MatrixXd>& dirs = {}) const;

    // Pointwise accessors (values; scratch tape inside).
    Eigen::VectorXd score(const DiffusionSchedule& sched, const Eigen::VectorXd& x,
                          double t) const;
    // returns (s, (grad_x s) v)
    std::pair<Eigen::VectorXd, Eigen::VectorXd> score_jvp(const DiffusionSchedule& sched,
                                                          const Eigen::VectorXd& x, double t,
                                                          const Eigen::VectorXd& v) const;
    // returns (s_jvp, v^T grad_x(s_jvp), s)
    struct GradDiv {
        Eigen::VectorXd s_jvp;
        Eigen::VectorXd vjp; // v^T grad_x((grad_x s) v)
        Eigen::VectorXd s;
    };
    GradDiv grad_div(const DiffusionSchedule& sched, const Eigen::VectorXd& x, double t,
                     const Eigen::VectorXd& v) const;
    // Exact small-dimension paths (dim <= 4), assembled from basis JVPs.
    Eigen::MatrixXd full_jacobian(const DiffusionSchedule& sched, const Eigen::VectorXd& x,
                                  double t) const;
    std::pair<double, Eigen::VectorXd> exact_div_grad(const DiffusionSchedule& sched,
                                                      const Eigen::VectorXd& x, double t) const;

    // Batched value-level evaluation used by the ODE paths.
    struct BatchDerivs {
        Eigen::MatrixXd s;                  // B x d
        Eigen::VectorXd trace;              // B
        std::vector<Eigen::MatrixXd> jcols; // d entries, each B x d (J e_k rows)
        Eigen::MatrixXd grad_trace;         // B x d
    };
    // level 0: s only; 1: + jacobian columns and trace; 2: + grad of trace.
    BatchDerivs batch_derivs(const DiffusionSchedule& sched, const Eigen::MatrixXd& X, double t,
                             int level) const;

    void save_checkpoint(const std::string& path) const;
    static ScoreModel load_checkpoint(const std::string& path);

    static constexpr int kExactDimLimit = 4;

private:
    void check_time(const DiffusionSchedule& sched, double t) const;
    Eigen::MatrixXd time_embedding(const Eigen::VectorXd& tv) const;

    ScoreModelConfig cfg_;
    uint64_t seed_;
    std::vector<Eigen::MatrixXd> params_;
    Eigen::VectorXd freqs_;
};

} // namespace hodsm
