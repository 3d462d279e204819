#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "hodsm/mixture.hpp"
#include "hodsm/schedule.hpp"
#include "hodsm/score_model.hpp"

namespace hodsm {

struct OdeSolverConfig {
    enum class Method { Rk4Fixed, Rk45Adaptive };
    Method method = Method::Rk45Adaptive;
    int steps = 500;    // rk4_fixed, per unit time
    double rtol = 1e-6; // rk45_adaptive
    double atol = 1e-8;

    static OdeSolverConfig rk4(int steps) {
        return {Method::Rk4Fixed, steps, 0, 0};
    }
    static OdeSolverConfig rk45(double rtol = 1e-6, double atol = 1e-8) {
        return {Method::Rk45Adaptive, 500, rtol, atol};
    }
};

using OdeRhs = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, double)>;

// Integrates dy/dt = rhs(y, t) from t0 to t1 (either direction). The state is
// a batch matrix; adaptive stepping controls the max norm over the batch.
Eigen::MatrixXd ode_integrate(const OdeRhs& rhs, Eigen::MatrixXd y0, double t0, double t1,
                              const OdeSolverConfig& cfg);

// Same, but stops exactly at each grid time (monotone from t0 to t1) and
// reports the state there.
Eigen::MatrixXd ode_integrate_grid(const OdeRhs& rhs, Eigen::MatrixXd y0, double t0, double t1,
                                   const OdeSolverConfig& cfg, std::span<const double> grid,
                                   const std::function<void(int, const Eigen::MatrixXd&)>& observe);

// Score provider for the flow ODEs: either a trained model or the analytic
// mixture score.
class OdeScoreSource {
public:
    struct Derivs {
        Eigen::MatrixXd s;                  // B x d
        Eigen::VectorXd trace;              // B     (level >= 1)
        std::vector<Eigen::MatrixXd> jcols; // J e_k rows (level >= 1)
        Eigen::MatrixXd grad_trace;         // B x d (level >= 2)
    };
    virtual ~OdeScoreSource() = default;
    virtual int dim() const = 0;
    virtual Eigen::MatrixXd score_rows(const Eigen::MatrixXd& X, double t) const = 0;
    virtual Derivs derivs(const Eigen::MatrixXd& X, double t, int level) const = 0;
};

class ModelScoreSource final : public OdeScoreSource {
public:
    ModelScoreSource(ScoreModel model, DiffusionSchedule sched);
    int dim() const override { return model_.dim(); }
    Eigen::MatrixXd score_rows(const Eigen::MatrixXd& X, double t) const override;
    Derivs derivs(const Eigen::MatrixXd& X, double t, int level) const override;

private:
    ScoreModel model_;
    DiffusionSchedule sched_;
};

class AnalyticScoreSource final : public OdeScoreSource {
public:
    AnalyticScoreSource(MixtureDensity q0, DiffusionSchedule sched);
    int dim() const override { return q0_.dim(); }
    Eigen::MatrixXd score_rows(const Eigen::MatrixXd& X, double t) const override;
    Derivs derivs(const Eigen::MatrixXd& X, double t, int level) const override;
    const MixtureDensity& q0() const { return q0_; }

private:
    MixtureDensity q0_;
    DiffusionSchedule sched_;
};

// h(x, t) = f(x, t) - g(t)^2/2 * score(x, t), applied row-wise.
Eigen::MatrixXd flow_rhs_rows(const OdeScoreSource& src, const DiffusionSchedule& sched,
                              const Eigen::MatrixXd& X, double t);
// Pointwise variants of the two flow fields.
Eigen::VectorXd rhs_model(const ScoreModel& m, const DiffusionSchedule& sched,
                          const Eigen::VectorXd& x, double t);
Eigen::VectorXd rhs_data(const MixtureDensity& q0, const DiffusionSchedule& sched,
                         const Eigen::VectorXd& x, double t);

// Exact log-likelihood log p_eps(x0) of the flow ODE defined by `src`,
// solving the augmented (x, logdet) system forward from eps_time to T with
// the exact trace (basis JVPs). One value per row of X0.
Eigen::VectorXd log_likelihood(const OdeScoreSource& src, const DiffusionSchedule& sched,
                               const Eigen::MatrixXd& X0, const OdeSolverConfig& solver);

// Score evolution along a trajectory of dz/dt = h(z, t):
// dn/dt = -grad(tr(grad h)) - (grad h)^T n. Solves forward eps->T under the
// source flow, sets the terminal score from the prior, then integrates the
// coupled (x, score) system back to eps, sampling at grid times.
struct ScorePath {
    std::vector<double> t;
    std::vector<Eigen::MatrixXd> x;     // B x d at each grid time
    std::vector<Eigen::MatrixXd> score; // grad log p_t of the flow at x
};
ScorePath model_score_along(const OdeScoreSource& src, const DiffusionSchedule& sched,
                            const Eigen::MatrixXd& X0, const OdeSolverConfig& solver,
                            std::span<const double> grid);

// grad_x log p_t^flow evaluated at arbitrary points: forward solve (t -> T)
// then the coupled reverse solve (T -> t).
Eigen::MatrixXd model_score_at(const OdeScoreSource& src, const DiffusionSchedule& sched,
                               const Eigen::MatrixXd& X, double t, const OdeSolverConfig& solver);

// Per-sample diagnostic integrands along h_q trajectories launched from
// x0 ~ q0 (so every column is an exact q_t sample). Rows index MC samples,
// columns index grid times.
struct DiagTable {
    Eigen::VectorXd t;
    Eigen::MatrixXd l_sm;     // 1/2 g^2 ||s_theta - grad log q_t||^2
    Eigen::MatrixXd l_fisher; // 1/2 g^2 ||grad log p_t^ODE - grad log q_t||^2
    Eigen::MatrixXd l_diff;   // g^2 ||s_theta - grad log p_t^ODE||^2
    Eigen::MatrixXd l_ode;    // 1/2 g^2 (s - q')^T (p' - q')
    Eigen::MatrixXd l_jdiff;  // 1/2 g^2 (s - q')^T (p' - s)

    Eigen::VectorXd mean(const Eigen::MatrixXd& m) const { return m.colwise().mean(); }
};

DiagTable diag_curves(const OdeScoreSource& model, const MixtureDensity& q0,
                      const DiffusionSchedule& sched, const Eigen::VectorXd& t_grid, int n_mc,
                      const OdeSolverConfig& solver, uint64_t seed, int threads = 1);

struct KlDecomposition {
    double j_sm = 0, j_diff = 0, j_ode = 0, j_fisher = 0;
    double se_sm = 0, se_diff = 0, se_ode = 0, se_fisher = 0;
    double cs_bound = 0; // sqrt(J_SM * J_Fisher)
};
KlDecomposition kl_decomposition(const DiagTable& table);

double trapezoid(const Eigen::VectorXd& t, const Eigen::VectorXd& y);

} // namespace hodsm
