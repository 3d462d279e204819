#include "hodsm/ode_flow.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace hodsm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Dormand-Prince 5(4) coefficients.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
constexpr double e1 = 35.0 / 384 - 5179.0 / 57600, e3 = 500.0 / 1113 - 7571.0 / 16695,
                 e4 = 125.0 / 192 - 393.0 / 640, e5 = -2187.0 / 6784 + 92097.0 / 339200,
                 e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;

MatrixXd rk4_span(const OdeRhs& rhs, MatrixXd y, double t0, double t1, int steps) {
    const double h = (t1 - t0) / steps;
    for (int i = 0; i < steps; ++i) {
        const double t = t0 + i * h;
        const MatrixXd k1 = rhs(y, t);
        const MatrixXd k2 = rhs(y + 0.5 * h * k1, t + 0.5 * h);
        const MatrixXd k3 = rhs(y + 0.5 * h * k2, t + 0.5 * h);
        const MatrixXd k4 = rhs(y + h * k3, t + h);
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return y;
}

MatrixXd rk45_span(const OdeRhs& rhs, MatrixXd y, double t0, double t1,
                   const OdeSolverConfig& cfg) {
    const double dir = t1 >= t0 ? 1.0 : -1.0;
    const double span = std::abs(t1 - t0);
    if (span == 0.0) return y;
    double t = t0;
    double h = dir * std::min(span, 1e-2);
    MatrixXd k1 = rhs(y, t);
    int rejected_in_a_row = 0;

    const double span_floor = 1e-14 * std::max({1.0, std::abs(t0), std::abs(t1)});
    while (dir * (t1 - t) > span_floor) {
        bool last = false;
        if (dir * (t + h - t1) >= 0) {
            h = t1 - t;
            last = true;
        }
        const MatrixXd k2 = rhs(y + h * (a21 * k1), t + c2 * h);
        const MatrixXd k3 = rhs(y + h * (a31 * k1 + a32 * k2), t + c3 * h);
        const MatrixXd k4 = rhs(y + h * (a41 * k1 + a42 * k2 + a43 * k3), t + c4 * h);
        const MatrixXd k5 = rhs(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), t + c5 * h);
        const MatrixXd k6 =
            rhs(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), t + h);
        const MatrixXd ynew = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        const MatrixXd k7 = rhs(ynew, t + h);
        const MatrixXd err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

        double ratio = 0.0;
        for (Eigen::Index j = 0; j < y.size(); ++j) {
            const double sc =
                cfg.atol + cfg.rtol * std::max(std::abs(y(j)), std::abs(ynew(j)));
            ratio = std::max(ratio, std::abs(err(j)) / sc);
        }
        if (!std::isfinite(ratio)) throw std::runtime_error("ode: non-finite state in rk45");

        if (ratio <= 1.0) {
            t = last ? t1 : t + h;
            y = ynew;
            k1 = k7; // FSAL
            rejected_in_a_row = 0;
        } else if (++rejected_in_a_row > 60) {
            throw std::runtime_error("ode: rk45 failed to converge at t=" + std::to_string(t));
        }
        const double fac = ratio > 0 ? 0.9 * std::pow(ratio, -0.2) : 5.0;
        h *= std::clamp(fac, 0.2, 5.0);
        if (std::abs(h) < 1e-14 * std::max(1.0, std::abs(t)))
            throw std::runtime_error("ode: step size underflow at t=" + std::to_string(t));
    }
    return y;
}

} // namespace

MatrixXd ode_integrate(const OdeRhs& rhs, MatrixXd y0, double t0, double t1,
                       const OdeSolverConfig& cfg) {
    if (t0 == t1) return y0;
    if (cfg.method == OdeSolverConfig::Method::Rk4Fixed) {
        const int steps = std::max(1, static_cast<int>(std::ceil(cfg.steps * std::abs(t1 - t0))));
        return rk4_span(rhs, std::move(y0), t0, t1, steps);
    }
    return rk45_span(rhs, std::move(y0), t0, t1, cfg);
}

MatrixXd ode_integrate_grid(const OdeRhs& rhs, MatrixXd y0, double t0, double t1,
                            const OdeSolverConfig& cfg, std::span<const double> grid,
                            const std::function<void(int, const MatrixXd&)>& observe) {
    double t = t0;
    MatrixXd y = std::move(y0);
    for (size_t i = 0; i < grid.size(); ++i) {
        y = ode_integrate(rhs, std::move(y), t, grid[i], cfg);
        t = grid[i];
        observe(static_cast<int>(i), y);
    }
    return ode_integrate(rhs, std::move(y), t, t1, cfg);
}

namespace {

// Adaptive stages may land a rounding error outside [eps, T]; the sources
// clamp instead of tripping the domain checks.
double clamp_time(const DiffusionSchedule& sched, double t) {
    return std::clamp(t, sched.eps_time, sched.T);
}

} // namespace

ModelScoreSource::ModelScoreSource(ScoreModel model, DiffusionSchedule sched)
    : model_(std::move(model)), sched_(sched) {}

MatrixXd ModelScoreSource::score_rows(const MatrixXd& X, double t) const {
    return model_.batch_derivs(sched_, X, clamp_time(sched_, t), 0).s;
}

OdeScoreSource::Derivs ModelScoreSource::derivs(const MatrixXd& X, double t, int level) const {
    const auto bd = model_.batch_derivs(sched_, X, clamp_time(sched_, t), level);
    return {bd.s, bd.trace, bd.jcols, bd.grad_trace};
}

AnalyticScoreSource::AnalyticScoreSource(MixtureDensity q0, DiffusionSchedule sched)
    : q0_(std::move(q0)), sched_(sched) {}

MatrixXd AnalyticScoreSource::score_rows(const MatrixXd& X, double t) const {
    const MixtureDensity qt = q0_.diffuse(sched_, clamp_time(sched_, t));
    MatrixXd s(X.rows(), X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i) s.row(i) = qt.score1(X.row(i)).transpose();
    return s;
}

OdeScoreSource::Derivs AnalyticScoreSource::derivs(const MatrixXd& X, double t, int level) const {
    const MixtureDensity qt = q0_.diffuse(sched_, clamp_time(sched_, t));
    const int d = q0_.dim();
    Derivs out;
    out.s.resize(X.rows(), d);
    if (level >= 1) {
        out.trace.resize(X.rows());
        out.jcols.assign(d, MatrixXd(X.rows(), d));
    }
    if (level >= 2) out.grad_trace.resize(X.rows(), d);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const VectorXd x = X.row(i);
        out.s.row(i) = qt.score1(x).transpose();
        if (level >= 1) {
            const MatrixXd h = qt.score2(x);
            out.trace(i) = h.trace();
            for (int k = 0; k < d; ++k) out.jcols[k].row(i) = h.col(k).transpose();
        }
        if (level >= 2) out.grad_trace.row(i) = qt.score3(x).transpose();
    }
    return out;
}

MatrixXd flow_rhs_rows(const OdeScoreSource& src, const DiffusionSchedule& sched,
                       const MatrixXd& X, double t) {
    t = clamp_time(sched, t);
    const double g = sched.diffusion(t);
    return sched.drift_rows(X, t) - 0.5 * g * g * src.score_rows(X, t);
}

VectorXd rhs_model(const ScoreModel& m, const DiffusionSchedule& sched, const VectorXd& x,
                   double t) {
    const double g = sched.diffusion(t);
    return sched.drift(x, t) - 0.5 * g * g * m.score(sched, x, t);
}

VectorXd rhs_data(const MixtureDensity& q0, const DiffusionSchedule& sched, const VectorXd& x,
                  double t) {
    const double g = sched.diffusion(t);
    return sched.drift(x, t) - 0.5 * g * g * q0.diffuse(sched, t).score1(x);
}

VectorXd log_likelihood(const OdeScoreSource& src, const DiffusionSchedule& sched,
                        const MatrixXd& X0, const OdeSolverConfig& solver) {
    const int d = src.dim();
    if (X0.cols() != d) throw std::invalid_argument("log_likelihood: dim mismatch");
    const Eigen::Index B = X0.rows();

    // State: [x (B x d) | accumulated integral of tr(grad h) (B x 1)]
    MatrixXd y0(B, d + 1);
    y0.leftCols(d) = X0;
    y0.col(d).setZero();

    const OdeRhs rhs = [&](const MatrixXd& y, double t) {
        t = clamp_time(sched, t);
        const MatrixXd X = y.leftCols(d);
        const auto dv = src.derivs(X, t, 1);
        const double g = sched.diffusion(t);
        const double a = sched.drift_coeff(t);
        MatrixXd dy(y.rows(), d + 1);
        dy.leftCols(d) = a * X - 0.5 * g * g * dv.s;
        dy.col(d) = (a * d - (0.5 * g * g) * dv.trace.array()).matrix();
        return dy;
    };

    const MatrixXd yT = ode_integrate(rhs, std::move(y0), sched.eps_time, sched.T, solver);
    VectorXd out(B);
    for (Eigen::Index i = 0; i < B; ++i)
        out(i) = sched.prior_logpdf(yT.row(i).head(d)) + yT(i, d);
    return out;
}

namespace {

// Coupled (x, score) reverse system of the instantaneous-change-of-score ODE:
// dx/dt = h(x, t), dn/dt = -grad(tr(grad h)) - (grad h)^T n.
OdeRhs coupled_rhs(const OdeScoreSource& src, const DiffusionSchedule& sched, int d) {
    return [&src, &sched, d](const MatrixXd& y, double t) {
        t = clamp_time(sched, t);
        const MatrixXd X = y.leftCols(d);
        const MatrixXd N = y.rightCols(d);
        const auto dv = src.derivs(X, t, 2);
        const double g2 = sched.diffusion(t) * sched.diffusion(t);
        const double a = sched.drift_coeff(t);
        MatrixXd jtn(X.rows(), d); // rows (J^T n)
        for (int k = 0; k < d; ++k)
            jtn.col(k) = (N.array() * dv.jcols[k].array()).rowwise().sum();
        MatrixXd dy(y.rows(), 2 * d);
        dy.leftCols(d) = a * X - 0.5 * g2 * dv.s;
        // grad(tr(grad h)) = -g^2/2 grad_trace; (grad h)^T n = a n - g^2/2 J^T n
        dy.rightCols(d) = 0.5 * g2 * dv.grad_trace - a * N + 0.5 * g2 * jtn;
        return dy;
    };
}

MatrixXd prior_score(const DiffusionSchedule& sched, const MatrixXd& XT) {
    return -XT / sched.prior_variance();
}

} // namespace

ScorePath model_score_along(const OdeScoreSource& src, const DiffusionSchedule& sched,
                            const MatrixXd& X0, const OdeSolverConfig& solver,
                            std::span<const double> grid) {
    const int d = src.dim();
    const Eigen::Index B = X0.rows();

    const OdeRhs fwd = [&](const MatrixXd& y, double t) {
        return flow_rhs_rows(src, sched, y, t);
    };
    const MatrixXd XT = ode_integrate(fwd, X0, sched.eps_time, sched.T, solver);

    MatrixXd y(B, 2 * d);
    y.leftCols(d) = XT;
    y.rightCols(d) = prior_score(sched, XT);

    ScorePath path;
    path.t.assign(grid.begin(), grid.end());
    path.x.resize(grid.size());
    path.score.resize(grid.size());

    // Reverse pass T -> eps, observing the grid in descending time order.
    std::vector<double> rev(grid.rbegin(), grid.rend());
    const OdeRhs rhs = coupled_rhs(src, sched, d);
    ode_integrate_grid(rhs, std::move(y), sched.T, sched.eps_time, solver, rev,
                       [&](int i, const MatrixXd& state) {
                           const size_t j = grid.size() - 1 - i;
                           path.x[j] = state.leftCols(d);
                           path.score[j] = state.rightCols(d);
                       });
    return path;
}

MatrixXd model_score_at(const OdeScoreSource& src, const DiffusionSchedule& sched,
                        const MatrixXd& X, double t, const OdeSolverConfig& solver) {
    const int d = src.dim();
    if (t >= sched.T) return prior_score(sched, X);

    const OdeRhs fwd = [&](const MatrixXd& y, double tt) {
        return flow_rhs_rows(src, sched, y, tt);
    };
    const MatrixXd XT = ode_integrate(fwd, X, t, sched.T, solver);

    MatrixXd y(X.rows(), 2 * d);
    y.leftCols(d) = XT;
    y.rightCols(d) = prior_score(sched, XT);
    const MatrixXd back = ode_integrate(coupled_rhs(src, sched, d), std::move(y), sched.T, t, solver);
    return back.rightCols(d);
}

DiagTable diag_curves(const OdeScoreSource& model, const MixtureDensity& q0,
                      const DiffusionSchedule& sched, const VectorXd& t_grid, int n_mc,
                      const OdeSolverConfig& solver, uint64_t seed, int threads) {
    if (t_grid.size() == 0) throw std::invalid_argument("diag_curves: empty time grid");
    const int G = static_cast<int>(t_grid.size());
    Eigen::VectorXd t_grid_c = t_grid;
    for (int i = 0; i < G; ++i) t_grid_c(i) = clamp_time(sched, t_grid_c(i));

    Rng rng(seed);
    const MatrixXd X0 = q0.sample(n_mc, rng);

    // h_q trajectories preserve q_t exactly, so the grid states are exact
    // q_t samples tied continuously across grid times.
    AnalyticScoreSource data_src(q0, sched);
    std::vector<MatrixXd> states(G);
    const OdeRhs hq = [&](const MatrixXd& y, double t) {
        return flow_rhs_rows(data_src, sched, y, t);
    };
    std::vector<double> grid_vec(t_grid_c.data(), t_grid_c.data() + G);
    ode_integrate_grid(hq, X0, sched.eps_time, sched.T, solver, grid_vec,
                       [&](int i, const MatrixXd& s) { states[i] = s; });

    DiagTable table;
    table.t = t_grid_c;
    table.l_sm.resize(n_mc, G);
    table.l_fisher.resize(n_mc, G);
    table.l_diff.resize(n_mc, G);
    table.l_ode.resize(n_mc, G);
    table.l_jdiff.resize(n_mc, G);

    const auto eval_column = [&](int j) {
        const double t = t_grid_c(j);
        const double g2 = sched.diffusion(t) * sched.diffusion(t);
        const MatrixXd& X = states[j];
        const MixtureDensity qt = q0.diffuse(sched, t);
        const MatrixXd s_model = model.score_rows(X, t);
        const MatrixXd p_score = model_score_at(model, sched, X, t, solver);
        for (int i = 0; i < n_mc; ++i) {
            const VectorXd q_score = qt.score1(X.row(i));
            const VectorXd a = s_model.row(i).transpose() - q_score;
            const VectorXd b = p_score.row(i).transpose() - q_score;
            table.l_sm(i, j) = 0.5 * g2 * a.squaredNorm();
            table.l_fisher(i, j) = 0.5 * g2 * b.squaredNorm();
            table.l_diff(i, j) = g2 * (b - a).squaredNorm();
            table.l_ode(i, j) = 0.5 * g2 * a.dot(b);
            table.l_jdiff(i, j) = 0.5 * g2 * a.dot(b - a);
        }
    };

    if (threads <= 1) {
        for (int j = 0; j < G; ++j) eval_column(j);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int w = 0; w < threads; ++w)
            pool.emplace_back([&] {
                for (int j = next.fetch_add(1); j < G; j = next.fetch_add(1)) eval_column(j);
            });
        for (auto& th : pool) th.join();
    }
    return table;
}

double trapezoid(const VectorXd& t, const VectorXd& y) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i + 1 < t.size(); ++i)
        acc += 0.5 * (y(i) + y(i + 1)) * (t(i + 1) - t(i));
    return acc;
}

KlDecomposition kl_decomposition(const DiagTable& table) {
    const int n = static_cast<int>(table.l_sm.rows());
    auto integrate_rows = [&](const Eigen::MatrixXd& m) {
        VectorXd out(n);
        for (int i = 0; i < n; ++i) out(i) = trapezoid(table.t, m.row(i).transpose());
        return out;
    };
    auto mean_se = [&](const VectorXd& v) {
        const double mean = v.mean();
        const double var = (v.array() - mean).square().sum() / std::max(1, n - 1);
        return std::make_pair(mean, std::sqrt(var / n));
    };

    KlDecomposition out;
    std::tie(out.j_sm, out.se_sm) = mean_se(integrate_rows(table.l_sm));
    std::tie(out.j_diff, out.se_diff) = mean_se(integrate_rows(table.l_jdiff));
    std::tie(out.j_ode, out.se_ode) = mean_se(integrate_rows(table.l_ode));
    std::tie(out.j_fisher, out.se_fisher) = mean_se(integrate_rows(table.l_fisher));
    out.cs_bound = std::sqrt(std::max(0.0, out.j_sm) * std::max(0.0, out.j_fisher));
    return out;
}

} // namespace hodsm
