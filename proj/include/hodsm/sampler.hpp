#pragma once

#include <Eigen/Dense>

#include "hodsm/ode_flow.hpp"
#include "hodsm/rng.hpp"
#include "hodsm/schedule.hpp"

namespace hodsm {

struct PcConfig {
    int n_steps = 1000;
    double snr = 0.16;
    int corrector_steps = 1;
    uint64_t seed = 0;

    void validate() const;
};

// Predictor-corrector sampling of the reverse SDE: Euler-Maruyama predictor
// on a uniform [eps, T] grid, annealed-Langevin corrector with step size
// 2 (snr ||z|| / ||s||)^2. Returns n points at t = eps; deterministic per seed.
Eigen::MatrixXd pc_sample(const OdeScoreSource& src, const DiffusionSchedule& sched, int n,
                          const PcConfig& cfg);

// Deterministic sampling of the flow ODE: draw x_T from the prior, solve
// backward to eps.
Eigen::MatrixXd ode_sample(const OdeScoreSource& src, const DiffusionSchedule& sched, int n,
                           const OdeSolverConfig& solver, uint64_t seed);

} // namespace hodsm
