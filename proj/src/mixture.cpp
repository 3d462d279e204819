#include "hodsm/mixture.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace hodsm {

namespace {

double log_gauss(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, double v) {
    const double d = static_cast<double>(x.size());
    return -0.5 * d * std::log(2.0 * M_PI * v) - 0.5 * (x - mu).squaredNorm() / v;
}

} // namespace

MixtureDensity::MixtureDensity(std::vector<double> weights, std::vector<Eigen::VectorXd> means,
                               std::vector<double> variances)
    : weights_(std::move(weights)), means_(std::move(means)), variances_(std::move(variances)) {
    if (weights_.empty() || weights_.size() != means_.size() ||
        weights_.size() != variances_.size())
        throw std::invalid_argument("mixture: weights/means/variances size mismatch");
    dim_ = static_cast<int>(means_[0].size());
    double wsum = 0.0;
    for (size_t i = 0; i < weights_.size(); ++i) {
        if (weights_[i] <= 0.0) throw std::invalid_argument("mixture: weights must be positive");
        if (variances_[i] <= 0.0) throw std::invalid_argument("mixture: variances must be positive");
        if (means_[i].size() != dim_) throw std::invalid_argument("mixture: mean dim mismatch");
        wsum += weights_[i];
    }
    if (std::abs(wsum - 1.0) > 1e-12) throw std::invalid_argument("mixture: weights must sum to 1");
}

MixtureDensity MixtureDensity::single(const Eigen::VectorXd& mean, double variance) {
    return MixtureDensity({1.0}, {mean}, {variance});
}

MixtureDensity MixtureDensity::mog1d() {
    Eigen::VectorXd m1(1), m2(1), m3(1);
    m1 << -2.0 / 9.0;
    m2 << -2.0 / 3.0;
    m3 << 4.0 / 9.0;
    const double v = 1.0 / 81.0;
    return MixtureDensity({0.4, 0.4, 0.2}, {m1, m2, m3}, {v, v, 2.0 * v});
}

double MixtureDensity::log_pdf(const Eigen::VectorXd& x) const {
    if (x.size() != dim_) throw std::invalid_argument("log_pdf: dimension mismatch");
    double m = -std::numeric_limits<double>::infinity();
    std::vector<double> lg(weights_.size());
    for (size_t i = 0; i < weights_.size(); ++i) {
        lg[i] = std::log(weights_[i]) + log_gauss(x, means_[i], variances_[i]);
        m = std::max(m, lg[i]);
    }
    double s = 0.0;
    for (double v : lg) s += std::exp(v - m);
    return m + std::log(s);
}

Eigen::VectorXd MixtureDensity::responsibilities(const Eigen::VectorXd& x) const {
    const double lp = log_pdf(x);
    Eigen::VectorXd g(components());
    for (int i = 0; i < components(); ++i)
        g(i) = std::exp(std::log(weights_[i]) + log_gauss(x, means_[i], variances_[i]) - lp);
    return g;
}

Eigen::VectorXd MixtureDensity::score1(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd g = responsibilities(x);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(dim_);
    for (int i = 0; i < components(); ++i) s += g(i) * (means_[i] - x) / variances_[i];
    return s;
}

Eigen::MatrixXd MixtureDensity::score2(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd g = responsibilities(x);
    const Eigen::VectorXd s1 = score1(x);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim_, dim_);
    for (int i = 0; i < components(); ++i) {
        const Eigen::VectorXd gi = (means_[i] - x) / variances_[i];
        const Eigen::VectorXd r = gi - s1;
        h += g(i) * (r * r.transpose());
        h.diagonal().array() -= g(i) / variances_[i];
    }
    return h;
}

Eigen::VectorXd MixtureDensity::score3(const Eigen::VectorXd& x) const {
    // d/dx tr(H): the posterior-weighted identity with per-component Hessians
    // -I/v_i captured as the constant terms (-d/v_i and -2/v_i below).
    const Eigen::VectorXd g = responsibilities(x);
    const Eigen::VectorXd s1 = score1(x);
    const double d = static_cast<double>(dim_);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim_);
    for (int i = 0; i < components(); ++i) {
        const Eigen::VectorXd gi = (means_[i] - x) / variances_[i];
        const Eigen::VectorXd r = gi - s1;
        out += g(i) * (r.squaredNorm() - (d + 2.0) / variances_[i]) * r;
    }
    return out;
}

MixtureDensity MixtureDensity::diffuse(const DiffusionSchedule& sched, double t) const {
    const auto [a, s] = sched.alpha_sigma(t);
    std::vector<Eigen::VectorXd> mu(means_);
    std::vector<double> var(variances_);
    for (size_t i = 0; i < mu.size(); ++i) {
        mu[i] = a * mu[i];
        var[i] = a * a * var[i] + s * s;
    }
    return MixtureDensity(weights_, std::move(mu), std::move(var));
}

Eigen::MatrixXd MixtureDensity::sample(int n, Rng& rng) const {
    Eigen::MatrixXd out(n, dim_);
    for (int r = 0; r < n; ++r) {
        double u = rng.uniform();
        int k = components() - 1;
        double acc = 0.0;
        for (int i = 0; i < components(); ++i) {
            acc += weights_[i];
            if (u < acc) { k = i; break; }
        }
        const double sd = std::sqrt(variances_[k]);
        for (int j = 0; j < dim_; ++j) out(r, j) = means_[k](j) + sd * rng.gaussian();
    }
    return out;
}

double MixtureDensity::cdf1d(double x) const {
    if (dim_ != 1) throw std::invalid_argument("cdf1d: mixture is not 1-D");
    double c = 0.0;
    for (int i = 0; i < components(); ++i) {
        const double z = (x - means_[i](0)) / std::sqrt(2.0 * variances_[i]);
        c += weights_[i] * 0.5 * std::erfc(-z);
    }
    return c;
}

MixturePosterior::MixturePosterior(const MixtureDensity& q0, double alpha_t, double sigma_t)
    : q0_(q0), alpha_(alpha_t), sigma_(sigma_t) {}

Eigen::VectorXd MixturePosterior::sample(const Eigen::VectorXd& x_t, Rng& rng) const {
    const int k = q0_.components();
    const double s2 = sigma_ * sigma_;
    // Marginal component weights of the posterior: w_i N(x_t | a mu_i, a^2 v_i + s^2).
    Eigen::VectorXd lw(k);
    double m = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < k; ++i) {
        const double v = alpha_ * alpha_ * q0_.variances()[i] + s2;
        const Eigen::VectorXd mu = alpha_ * q0_.means()[i];
        const double d = static_cast<double>(x_t.size());
        lw(i) = std::log(q0_.weights()[i]) - 0.5 * d * std::log(2.0 * M_PI * v) -
                0.5 * (x_t - mu).squaredNorm() / v;
        m = std::max(m, lw(i));
    }
    double z = 0.0;
    for (int i = 0; i < k; ++i) z += std::exp(lw(i) - m);
    const double u = rng.uniform();
    int pick = k - 1;
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
        acc += std::exp(lw(i) - m) / z;
        if (u < acc) { pick = i; break; }
    }
    // Conditional within the component: product of two Gaussians in x0.
    const double v0 = q0_.variances()[pick];
    const double prec = 1.0 / v0 + alpha_ * alpha_ / s2;
    const double cv = 1.0 / prec;
    const Eigen::VectorXd cm = cv * (q0_.means()[pick] / v0 + alpha_ * x_t / s2);
    Eigen::VectorXd out(x_t.size());
    const double sd = std::sqrt(cv);
    for (Eigen::Index j = 0; j < out.size(); ++j) out(j) = cm(j) + sd * rng.gaussian();
    return out;
}

Eigen::MatrixXd CheckerboardSampler::sample(int n, Rng& rng) const {
    const int cells = static_cast<int>(std::round(2.0 * extent / cell_size));
    // Active ("black") cells: (i + j) even.
    std::vector<std::pair<int, int>> active;
    for (int i = 0; i < cells; ++i)
        for (int j = 0; j < cells; ++j)
            if ((i + j) % 2 == 0) active.emplace_back(i, j);
    Eigen::MatrixXd out(n, 2);
    for (int r = 0; r < n; ++r) {
        const auto [i, j] = active[rng.index(active.size())];
        out(r, 0) = -extent + (i + rng.uniform()) * cell_size;
        out(r, 1) = -extent + (j + rng.uniform()) * cell_size;
    }
    return out;
}

bool CheckerboardSampler::in_black_cell(const Eigen::Vector2d& p) const {
    if (p.x() < -extent || p.x() >= extent || p.y() < -extent || p.y() >= extent) return false;
    const int i = static_cast<int>(std::floor((p.x() + extent) / cell_size));
    const int j = static_cast<int>(std::floor((p.y() + extent) / cell_size));
    return (i + j) % 2 == 0;
}

} // namespace hodsm
