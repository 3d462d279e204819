#pragma once

#include <Eigen/Dense>

namespace hodsm {

enum class ScheduleKind { VE, VP };

// Forward diffusion process. The perturbation kernel is
// q(x_t | x_0) = N(x_t | alpha_t x_0, sigma_t^2 I), and the matching SDE is
// dx = f(x,t) dt + g(t) dw with g(t)^2 = d(sigma_t^2)/dt - 2 dlog(alpha_t)/dt sigma_t^2.
struct DiffusionSchedule {
    ScheduleKind kind = ScheduleKind::VE;
    double sigma_min = 0.01; // VE
    double sigma_max = 50.0; // VE
    double beta_min = 0.1;   // VP
    double beta_max = 20.0;  // VP
    double T = 1.0;
    double eps_time = 1e-5;

    static DiffusionSchedule ve(double sigma_min = 0.01, double sigma_max = 50.0,
                                double eps_time = 1e-5);
    static DiffusionSchedule vp(double beta_min = 0.1, double beta_max = 20.0,
                                double eps_time = 1e-5);

    double alpha(double t) const;
    double sigma(double t) const;
    std::pair<double, double> alpha_sigma(double t) const;

    // beta(t) for VP; not meaningful for VE.
    double beta(double t) const { return beta_min + t * (beta_max - beta_min); }

    Eigen::VectorXd drift(const Eigen::VectorXd& x, double t) const;
    // Drift applied row-wise to a batch (linear in x for both kinds).
    Eigen::MatrixXd drift_rows(const Eigen::MatrixXd& x, double t) const;
    // Scalar coefficient a(t) with f(x,t) = a(t) x.
    double drift_coeff(double t) const;

    double diffusion(double t) const;

    Eigen::VectorXd perturb(const Eigen::VectorXd& x0, const Eigen::VectorXd& noise,
                            double t) const;

    // Log-density of the terminal prior: N(0, sigma_T^2 I) for VE, N(0, I) for VP.
    double prior_logpdf(const Eigen::VectorXd& x) const;
    double prior_variance() const;

private:
    void check_time(double t) const;
};

} // namespace hodsm
