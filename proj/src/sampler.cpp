#include "hodsm/sampler.hpp"

#include <cmath>
#include <stdexcept>

namespace hodsm {

using Eigen::MatrixXd;

void PcConfig::validate() const {
    if (n_steps < 1) throw std::invalid_argument("pc: n_steps must be >= 1");
    if (snr <= 0) throw std::invalid_argument("pc: snr must be > 0");
    if (corrector_steps < 0) throw std::invalid_argument("pc: corrector_steps must be >= 0");
}

MatrixXd pc_sample(const OdeScoreSource& src, const DiffusionSchedule& sched, int n,
                   const PcConfig& cfg) {
    cfg.validate();
    if (n < 1) throw std::invalid_argument("pc_sample: n must be >= 1");
    const int d = src.dim();
    Rng rng(cfg.seed);

    MatrixXd x = rng.gaussian_matrix(n, d) * std::sqrt(sched.prior_variance());
    const double dt = (sched.T - sched.eps_time) / cfg.n_steps;

    for (int step = 0; step < cfg.n_steps; ++step) {
        const double t = sched.T - step * dt;
        // Predictor: reverse-SDE Euler-Maruyama, dx = [f - g^2 s] dt + g dw_bar.
        const double g = sched.diffusion(t);
        const MatrixXd s = src.score_rows(x, t);
        const MatrixXd z = rng.gaussian_matrix(n, d);
        x += -dt * (sched.drift_rows(x, t) - g * g * s) + g * std::sqrt(dt) * z;
        if (!x.allFinite())
            throw std::runtime_error("pc_sample: non-finite state at predictor step " +
                                     std::to_string(step));

        // Corrector: annealed Langevin at the new time level.
        const double tc = std::max(sched.eps_time, t - dt);
        for (int c = 0; c < cfg.corrector_steps; ++c) {
            const MatrixXd grad = src.score_rows(x, tc);
            const MatrixXd noise = rng.gaussian_matrix(n, d);
            const double grad_norm = grad.rowwise().norm().mean();
            const double noise_norm = noise.rowwise().norm().mean();
            if (grad_norm <= 1e-300) break; // zero score: no correction defined
            const double eps_l = 2.0 * std::pow(cfg.snr * noise_norm / grad_norm, 2.0);
            x += eps_l * grad + std::sqrt(2.0 * eps_l) * noise;
            if (!x.allFinite())
                throw std::runtime_error("pc_sample: non-finite state at corrector step " +
                                         std::to_string(step));
        }
    }
    return x;
}

MatrixXd ode_sample(const OdeScoreSource& src, const DiffusionSchedule& sched, int n,
                    const OdeSolverConfig& solver, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("ode_sample: n must be >= 1");
    Rng rng(seed);
    MatrixXd xT = rng.gaussian_matrix(n, src.dim()) * std::sqrt(sched.prior_variance());
    const OdeRhs rhs = [&](const MatrixXd& y, double t) {
        return flow_rhs_rows(src, sched, y, t);
    };
    return ode_integrate(rhs, std::move(xT), sched.T, sched.eps_time, solver);
}

} // namespace hodsm
