#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "hodsm/mixture.hpp"
#include "test_util.hpp"

using namespace hodsm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec1(double x) {
    VectorXd v(1);
    v << x;
    return v;
}

} // namespace

TEST_CASE("standard normal log pdf at the mode") {
    const auto q = MixtureDensity::single(VectorXd::Zero(1), 1.0);
    CHECK(q.log_pdf(vec1(0.0)) == doctest::Approx(-0.5 * std::log(2.0 * M_PI)).epsilon(1e-12));
}

TEST_CASE("paper mixture log pdf agrees with direct summation") {
    const auto q = MixtureDensity::mog1d();
    const double x = -2.0 / 3.0;
    double direct = 0.0;
    const double v = 1.0 / 81.0;
    auto comp = [&](double w, double mu, double var) {
        return w / std::sqrt(2.0 * M_PI * var) * std::exp(-0.5 * (x - mu) * (x - mu) / var);
    };
    direct += comp(0.4, -2.0 / 9.0, v);
    direct += comp(0.4, -2.0 / 3.0, v);
    direct += comp(0.2, 4.0 / 9.0, 2.0 * v);
    CHECK(q.log_pdf(vec1(x)) == doctest::Approx(std::log(direct)).epsilon(1e-12));
}

TEST_CASE("1-D mass integrates to one") {
    const auto q = MixtureDensity::mog1d();
    const int n = 20001;
    const double lo = -3.0, hi = 3.0;
    double mass = 0.0;
    double prev = q.pdf(vec1(lo));
    for (int i = 1; i < n; ++i) {
        const double x = lo + (hi - lo) * i / (n - 1);
        const double cur = q.pdf(vec1(x));
        mass += 0.5 * (prev + cur) * (hi - lo) / (n - 1);
        prev = cur;
    }
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("dimension mismatch raises") {
    const auto q = MixtureDensity::mog1d();
    CHECK_THROWS_AS(q.log_pdf(VectorXd::Zero(2)), std::invalid_argument);
}

TEST_CASE("weights must sum to one and variances positive") {
    CHECK_THROWS_AS(MixtureDensity({0.5, 0.4}, {vec1(0), vec1(1)}, {1.0, 1.0}),
                    std::invalid_argument);
    CHECK_THROWS_AS(MixtureDensity({1.0}, {vec1(0)}, {0.0}), std::invalid_argument);
}

TEST_CASE("score1 closed forms") {
    const auto g = MixtureDensity::single(vec1(0.7), 0.3);
    CHECK(g.score1(vec1(0.7)).norm() == doctest::Approx(0.0));
    const auto n01 = MixtureDensity::single(vec1(0.0), 1.0);
    CHECK(n01.score1(vec1(2.0))(0) == doctest::Approx(-2.0).epsilon(1e-12));
}

TEST_CASE("score1 matches central differences of log_pdf") {
    const auto q = MixtureDensity::mog1d();
    for (double x : {0.0, -0.25, 0.45, -0.7}) {
        const double fd = testutil::central_diff(
            [&](double u) { return q.log_pdf(vec1(u)); }, x, 1e-6);
        CHECK(std::abs(q.score1(vec1(x))(0) - fd) < 1e-6);
    }
}

TEST_CASE("score2 closed forms and finite differences") {
    const auto g = MixtureDensity::single(vec1(0.1), 0.5);
    CHECK(g.score2(vec1(1.3))(0, 0) == doctest::Approx(-2.0).epsilon(1e-12));

    const auto q = MixtureDensity::mog1d();
    for (double x : {0.0, -0.3, 0.5}) {
        const double fd = testutil::central_diff(
            [&](double u) { return q.score1(vec1(u))(0); }, x, 1e-5);
        CHECK(std::abs(q.score2(vec1(x))(0, 0) - fd) < 1e-5);
    }
}

TEST_CASE("2-D symmetric mixture Hessian is symmetric") {
    Eigen::VectorXd m1(2), m2(2);
    m1 << 1.0, 0.0;
    m2 << -1.0, 0.0;
    const MixtureDensity q({0.5, 0.5}, {m1, m2}, {0.4, 0.4});
    Eigen::VectorXd x(2);
    x << 0.0, 0.3;
    const MatrixXd h = q.score2(x);
    CHECK(std::abs(h(0, 1) - h(1, 0)) < 1e-14);
    // and it matches the finite-difference Jacobian of score1
    const MatrixXd fd = testutil::jacobian_fd(
        [&](const VectorXd& u) { return q.score1(u); }, x, 1e-5);
    CHECK((h - fd).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("score3 closed forms") {
    const auto g = MixtureDensity::single(vec1(0.3), 0.2);
    CHECK(g.score3(vec1(-0.9)).norm() == doctest::Approx(0.0));

    // symmetric two-component mixture at the symmetry point
    const MixtureDensity sym({0.5, 0.5}, {vec1(-1.0), vec1(1.0)}, {0.3, 0.3});
    CHECK(std::abs(sym.score3(vec1(0.0))(0)) < 1e-13);

    const auto q = MixtureDensity::mog1d();
    for (double x : {0.0, -0.4, 0.3}) {
        const double fd = testutil::central_diff(
            [&](double u) { return q.score2(vec1(u)).trace(); }, x, 1e-5);
        CHECK(std::abs(q.score3(vec1(x))(0) - fd) < 1e-4);
    }
}

TEST_CASE("score3 matches gradient of tr(score2) in 2-D") {
    Eigen::VectorXd m1(2), m2(2);
    m1 << 0.5, -0.2;
    m2 << -0.4, 0.6;
    const MixtureDensity q({0.3, 0.7}, {m1, m2}, {0.5, 0.9});
    Eigen::VectorXd x(2);
    x << 0.2, 0.1;
    const VectorXd fd = testutil::grad_fd(
        [&](const VectorXd& u) { return q.score2(u).trace(); }, x, 1e-5);
    CHECK((q.score3(x) - fd).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("diffuse composes means and variances") {
    const auto sched = DiffusionSchedule::vp(0.1, 20.0);
    const auto q = MixtureDensity::mog1d();
    const auto q0 = q.diffuse(sched, 0.0);
    for (int i = 0; i < q.components(); ++i) {
        CHECK(q0.means()[i](0) == doctest::Approx(q.means()[i](0)).epsilon(1e-12));
        CHECK(q0.variances()[i] == doctest::Approx(q.variances()[i]).epsilon(1e-12));
    }

    // single N(0,1) with sigma_t = 3 becomes N(0, 10) under VE
    const auto ve = DiffusionSchedule::ve(0.01, 50.0);
    // find t with sigma = 3: t = ln(3/0.01)/ln(5000)
    const double t = std::log(3.0 / 0.01) / std::log(5000.0);
    const auto n01 = MixtureDensity::single(vec1(0.0), 1.0);
    const auto nt = n01.diffuse(ve, t);
    CHECK(nt.variances()[0] == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("diffuse matches Monte-Carlo perturbation (KS level 0.001)") {
    const auto sched = DiffusionSchedule::ve(0.01, 50.0);
    const auto q = MixtureDensity::mog1d();
    const double t = 0.5;
    const auto qt = q.diffuse(sched, t);
    const auto [a, sg] = sched.alpha_sigma(t);

    Rng rng(11);
    const int n = 1000000;
    const MatrixXd x0 = q.sample(n, rng);
    std::vector<double> xs(n);
    for (int i = 0; i < n; ++i) xs[i] = a * x0(i, 0) + sg * rng.gaussian();
    const double p = testutil::ks_test_pvalue(xs, [&](double x) { return qt.cdf1d(x); });
    CHECK(p > 0.001);
}

TEST_CASE("sampling determinism and moments") {
    const auto q = MixtureDensity::single(vec1(0.0), 1.0);
    Rng r1(3), r2(3);
    const MatrixXd a = q.sample(16, r1), b = q.sample(16, r2);
    CHECK((a - b).norm() == 0.0);

    CHECK(q.sample(0, r1).rows() == 0);

    Rng r3(5);
    const MatrixXd big = q.sample(1000000, r3);
    CHECK(std::abs(big.col(0).mean()) < 0.004); // 3 sigma / sqrt(n) plus slack
}

TEST_CASE("checkerboard samples land in black cells") {
    CheckerboardSampler cb;
    Rng rng(9);
    const MatrixXd pts = cb.sample(10000, rng);
    for (int i = 0; i < pts.rows(); ++i) {
        CHECK(cb.in_black_cell(Eigen::Vector2d(pts(i, 0), pts(i, 1))));
    }
}

TEST_CASE("posterior sampling reproduces the lemma identities") {
    // Lemmas tested at a handful of (x0, eps, t) draws; the acceptance suite
    // re-runs them at full strength.
    const auto sched = DiffusionSchedule::ve(0.01, 50.0);
    const auto q0 = MixtureDensity::mog1d();
    Rng rng(21);

    for (int rep = 0; rep < 3; ++rep) {
        const double t = rng.uniform(0.05, 0.9);
        const auto [a, sg] = sched.alpha_sigma(t);
        const VectorXd x0 = q0.sample(1, rng).row(0);
        const VectorXd xt = vec1(a * x0(0) + sg * rng.gaussian());
        const auto qt = q0.diffuse(sched, t);
        const MixturePosterior post(q0, a, sg);

        const int n = 200000;
        VectorXd cond_scores(n), tr_terms(n), third_terms(n);
        const VectorXd s1 = qt.score1(xt);
        for (int i = 0; i < n; ++i) {
            const VectorXd x0p = post.sample(xt, rng);
            const double cs = -(xt(0) - a * x0p(0)) / (sg * sg);
            cond_scores(i) = cs;
            const double diff = cs - s1(0);
            tr_terms(i) = -1.0 / (sg * sg) + diff * diff;
            third_terms(i) = diff * diff * diff;
        }
        const auto m1 = testutil::mean_se(cond_scores);
        CHECK(std::abs(m1.mean - s1(0)) < 4.0 * m1.se + 1e-12);

        const auto m2 = testutil::mean_se(tr_terms);
        CHECK(std::abs(m2.mean - qt.score2(xt)(0, 0)) < 4.0 * m2.se + 1e-12);

        const auto m3 = testutil::mean_se(third_terms);
        CHECK(std::abs(m3.mean - qt.score3(xt)(0)) < 4.0 * m3.se + 1e-12);
    }
}
