#include "hodsm/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace hodsm {

DiffusionSchedule DiffusionSchedule::ve(double sigma_min, double sigma_max, double eps_time) {
    if (sigma_min <= 0 || sigma_max <= sigma_min)
        throw std::invalid_argument("ve schedule requires 0 < sigma_min < sigma_max");
    DiffusionSchedule s;
    s.kind = ScheduleKind::VE;
    s.sigma_min = sigma_min;
    s.sigma_max = sigma_max;
    s.eps_time = eps_time;
    return s;
}

DiffusionSchedule DiffusionSchedule::vp(double beta_min, double beta_max, double eps_time) {
    if (beta_min <= 0 || beta_max <= beta_min)
        throw std::invalid_argument("vp schedule requires 0 < beta_min < beta_max");
    DiffusionSchedule s;
    s.kind = ScheduleKind::VP;
    s.beta_min = beta_min;
    s.beta_max = beta_max;
    s.eps_time = eps_time;
    return s;
}

void DiffusionSchedule::check_time(double t) const {
    if (!(t >= 0.0 && t <= T)) throw std::domain_error("time outside [0, T]");
}

double DiffusionSchedule::alpha(double t) const {
    check_time(t);
    if (kind == ScheduleKind::VE) return 1.0;
    const double ib = beta_min * t + 0.5 * t * t * (beta_max - beta_min);
    return std::exp(-0.5 * ib);
}

double DiffusionSchedule::sigma(double t) const {
    check_time(t);
    if (kind == ScheduleKind::VE) return sigma_min * std::pow(sigma_max / sigma_min, t);
    const double a = alpha(t);
    return std::sqrt(std::max(0.0, 1.0 - a * a));
}

std::pair<double, double> DiffusionSchedule::alpha_sigma(double t) const {
    return {alpha(t), sigma(t)};
}

double DiffusionSchedule::drift_coeff(double t) const {
    check_time(t);
    if (kind == ScheduleKind::VE) return 0.0;
    return -0.5 * beta(t);
}

Eigen::VectorXd DiffusionSchedule::drift(const Eigen::VectorXd& x, double t) const {
    return drift_coeff(t) * x;
}

Eigen::MatrixXd DiffusionSchedule::drift_rows(const Eigen::MatrixXd& x, double t) const {
    return drift_coeff(t) * x;
}

double DiffusionSchedule::diffusion(double t) const {
    check_time(t);
    if (kind == ScheduleKind::VE)
        return sigma(t) * std::sqrt(2.0 * std::log(sigma_max / sigma_min));
    return std::sqrt(beta(t));
}

Eigen::VectorXd DiffusionSchedule::perturb(const Eigen::VectorXd& x0,
                                           const Eigen::VectorXd& noise, double t) const {
    if (x0.size() != noise.size()) throw std::invalid_argument("perturb: dimension mismatch");
    const auto [a, s] = alpha_sigma(t);
    return a * x0 + s * noise;
}

double DiffusionSchedule::prior_variance() const {
    return kind == ScheduleKind::VE ? sigma_max * sigma_max : 1.0;
}

double DiffusionSchedule::prior_logpdf(const Eigen::VectorXd& x) const {
    const double v = prior_variance();
    const double d = static_cast<double>(x.size());
    return -0.5 * d * std::log(2.0 * M_PI * v) - 0.5 * x.squaredNorm() / v;
}

} // namespace hodsm
