#pragma once

#include <Eigen/Dense>
#include <vector>

#include "hodsm/rng.hpp"
#include "hodsm/schedule.hpp"

namespace hodsm {

// Weighted mixture of isotropic Gaussians with closed-form scores of orders
// 1-3. Doubles as the data distribution q_0 and, through diffuse(), as the
// diffused marginal q_t (still a Gaussian mixture under the linear kernel).
class MixtureDensity {
public:
    MixtureDensity(std::vector<double> weights, std::vector<Eigen::VectorXd> means,
                   std::vector<double> variances);

    static MixtureDensity single(const Eigen::VectorXd& mean, double variance);
    // 1-D three-component mixture used throughout the synthetic experiments:
    // 0.4 N(-2/9, 1/81) + 0.4 N(-2/3, 1/81) + 0.2 N(4/9, 2/81).
    static MixtureDensity mog1d();

    int dim() const { return dim_; }
    int components() const { return static_cast<int>(weights_.size()); }
    const std::vector<double>& weights() const { return weights_; }
    const std::vector<Eigen::VectorXd>& means() const { return means_; }
    const std::vector<double>& variances() const { return variances_; }

    double log_pdf(const Eigen::VectorXd& x) const;
    double pdf(const Eigen::VectorXd& x) const { return std::exp(log_pdf(x)); }

    Eigen::VectorXd score1(const Eigen::VectorXd& x) const;
    Eigen::MatrixXd score2(const Eigen::VectorXd& x) const;
    // gradient of tr(score2)
    Eigen::VectorXd score3(const Eigen::VectorXd& x) const;

    // Posterior responsibilities gamma_i(x).
    Eigen::VectorXd responsibilities(const Eigen::VectorXd& x) const;

    MixtureDensity diffuse(const DiffusionSchedule& sched, double t) const;

    Eigen::MatrixXd sample(int n, Rng& rng) const; // n x dim

    // 1-D CDF (used by KS tests).
    double cdf1d(double x) const;

private:
    int dim_;
    std::vector<double> weights_;
    std::vector<Eigen::VectorXd> means_;
    std::vector<double> variances_;
};

// Draw x0 ~ q(x0 | x_t) for the diffusion kernel posterior of a mixture prior:
// categorical over components, then a Gaussian conditional. Exact, no MCMC.
class MixturePosterior {
public:
    MixturePosterior(const MixtureDensity& q0, double alpha_t, double sigma_t);

    Eigen::VectorXd sample(const Eigen::VectorXd& x_t, Rng& rng) const;

private:
    const MixtureDensity& q0_;
    double alpha_, sigma_;
};

struct CheckerboardSampler {
    double cell_size = 1.0;
    double extent = 2.0; // board covers [-extent, extent]^2

    Eigen::MatrixXd sample(int n, Rng& rng) const; // n x 2
    bool in_black_cell(const Eigen::Vector2d& p) const;
};

} // namespace hodsm
