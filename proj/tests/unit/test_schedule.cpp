#include "doctest.h"

#include "oracle.hpp"
#include "sed/schedule.hpp"

#include <cmath>

using namespace sed;

TEST_CASE("cosine schedule shape") {
    const auto s = cosine_schedule(1000, 0.008);
    CHECK(s.alpha_bar[0] == 1.0);
    CHECK(s.alpha_bar[1000] < 1e-3);
    for (int t = 1; t <= 1000; ++t) {
        const auto i = static_cast<size_t>(t);
        REQUIRE(s.alpha_bar[i] < s.alpha_bar[i - 1]);
        REQUIRE(s.beta[i] > 0.0);
        REQUIRE(s.beta[i] <= 0.999);
        REQUIRE(s.alpha[i] == 1.0 - s.beta[i]);
    }
    // Reference value evaluated in extended precision outside the library.
    CHECK(s.beta[1] == doctest::Approx(4.128422482196914e-05).epsilon(1e-9));
    CHECK(s.one_minus_alpha_bar[1] == s.beta[1]);
}

TEST_CASE("alpha_bar matches an explicit product") {
    const auto s = cosine_schedule(1000, 0.008);
    double prod = 1.0;
    for (int t = 1; t <= 1000; ++t) {
        prod *= 1.0 - s.beta[static_cast<size_t>(t)];
        REQUIRE(std::abs(s.alpha_bar[static_cast<size_t>(t)] - prod) < 1e-12);
        REQUIRE(std::abs(s.one_minus_alpha_bar[static_cast<size_t>(t)] - (1.0 - prod)) < 1e-12);
    }
}

TEST_CASE("offset is a knob and bad arguments throw") {
    const auto a = cosine_schedule(1000, 0.008);
    const auto b = cosine_schedule(1000, 0.05);
    CHECK(b.beta[1] > a.beta[1]);
    CHECK_THROWS_AS(cosine_schedule(0), Error);
    CHECK_THROWS_AS(cosine_schedule(10, 0.0), Error);
}

TEST_CASE("forward_step") {
    const auto s = cosine_schedule(1000);
    MatD x(1, 3);
    x << 1.0, -2.0, 0.5;
    const MatD zero = MatD::Zero(1, 3);
    const MatD shrunk = forward_step<double>(x, 300, zero, s);
    CHECK((shrunk - std::sqrt(1.0 - s.beta[300]) * x).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(forward_step<double>(x, 0, zero, s), Error);
    CHECK_THROWS_AS(forward_step<double>(x, 1001, zero, s), Error);

    // Zero start: sample std equals sqrt(beta_t).
    Rng rng(3);
    const int n = 200000;
    MatD eps(n, 1);
    fill_normal(eps, rng);
    const MatD y = forward_step<double>(MatD::Zero(n, 1), 700, eps, s);
    const double sd = std::sqrt(y.squaredNorm() / n);
    CHECK(std::abs(sd / std::sqrt(s.beta[700]) - 1.0) < 5 * std::sqrt(0.5 / n));
}

TEST_CASE("forward_marginal") {
    const auto s = cosine_schedule(1000);
    MatD x0(1, 2);
    x0 << 0.3, -1.2;
    MatD eps(1, 2);
    eps << 2.0, 1.0;
    CHECK(forward_marginal<double>(x0, 0, eps, s) == x0);

    const MatD at_t = forward_marginal<double>(x0, 1000, eps, s);
    CHECK((at_t - eps).norm() < 0.04 * x0.norm());

    // Scalar case with alpha_bar = 0.25 on a hand-built schedule.
    NoiseSchedule h;
    h.T = 1;
    h.beta = {0.0, 0.75};
    h.alpha = {1.0, 0.25};
    h.alpha_bar = {1.0, 0.25};
    h.one_minus_alpha_bar = {0.0, 0.75};
    MatD one(1, 1);
    one << 1.0;
    MatD two(1, 1);
    two << 2.0;
    CHECK(forward_marginal<double>(one, 1, two, h)(0, 0) == doctest::Approx(0.5 + std::sqrt(0.75) * 2.0));
}

TEST_CASE("chain composition agrees with the marginal") {
    const auto s = cosine_schedule(1000);
    const std::vector<double> x0{1.3, -0.7};
    const std::vector<int> ts{0, 10, 500, 1000};
    const int64_t n = 20000;
    const auto moments = oracle::mc_chain_marginal(x0, ts, s.beta, n, 17);
    for (const auto& m : moments) {
        const auto t = static_cast<size_t>(m.t);
        const double var = 1.0 - s.alpha_bar[t];
        for (size_t k = 0; k < x0.size(); ++k) {
            const double mean = std::sqrt(s.alpha_bar[t]) * x0[k];
            if (m.t == 0) {
                CHECK(m.mean[k] == doctest::Approx(x0[k]).epsilon(1e-14));
                CHECK(m.var[k] == doctest::Approx(0.0));
                continue;
            }
            CHECK(std::abs(m.mean[k] - mean) < 4 * std::sqrt(var / n));
            CHECK(std::abs(m.var[k] - var) < 4 * var * std::sqrt(2.0 / (n - 1)));
        }
    }
}

TEST_CASE("posterior boundary and variance bound") {
    const auto s = cosine_schedule(1000);
    MatD x0(2, 2);
    x0 << 0.1, 0.2, -0.3, 0.4;
    MatD xt(2, 2);
    xt << 5.0, -5.0, 1.0, 2.0;
    const auto p = posterior<double>(x0, xt, 1, s);
    CHECK(p.mean == x0);
    CHECK(p.variance == 0.0);
    CHECK_THROWS_AS(posterior<double>(x0, xt, 0, s), Error);
    for (int t = 2; t <= 1000; ++t) REQUIRE(posterior_coefficients(s, t).variance < s.beta[static_cast<size_t>(t)]);
}

TEST_CASE("posterior agrees with grid quadrature") {
    const auto s = cosine_schedule(1000);
    Rng rng(21);
    std::normal_distribution<double> nd;
    for (int c = 0; c < 12; ++c) {
        const int t = std::uniform_int_distribution<int>(2, 1000)(rng);
        const double x0 = nd(rng);
        const double xt = std::sqrt(s.alpha_bar[static_cast<size_t>(t)]) * x0 +
                          std::sqrt(1.0 - s.alpha_bar[static_cast<size_t>(t)]) * nd(rng);
        const auto g = oracle::grid_posterior(x0, xt, t, s.beta);
        const auto k = posterior_coefficients(s, t);
        CAPTURE(t);
        CHECK(std::abs(k.x0_coef * x0 + k.xt_coef * xt - g.mean) < 1e-6);
        CHECK(std::abs(k.variance - g.var) < 1e-6);
    }
    // Equal inputs: mean is v times the coefficient sum.
    const double v = 0.7;
    const auto k = posterior_coefficients(s, 250);
    const auto g = oracle::grid_posterior(v, v, 250, s.beta);
    CHECK(std::abs(v * (k.x0_coef + k.xt_coef) - g.mean) < 1e-6);
}

TEST_CASE("respace keeps the endpoints") {
    const auto base = cosine_schedule(1000);
    const auto r = respace(base, 50);
    CHECK(r.T == 50);
    CHECK(r.model_time[50] == 1000);
    CHECK(r.model_time[1] == 20);
    CHECK(r.alpha_bar[50] == base.alpha_bar[1000]);
    CHECK(posterior_coefficients(r, 1).variance == 0.0);
    for (int k = 1; k <= 50; ++k) REQUIRE(r.alpha_bar[static_cast<size_t>(k)] < r.alpha_bar[static_cast<size_t>(k - 1)]);
    CHECK_THROWS_AS(respace(base, 0), Error);
}
