#include "sed/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sed {

void NoiseSchedule::check_step(int t, int lowest) const {
    if (t < lowest || t > T) {
        throw Error("diffusion step " + std::to_string(t) + " outside [" + std::to_string(lowest) + ", " +
                    std::to_string(T) + "]");
    }
}

namespace {

void fill_cumulative(NoiseSchedule& s) {
    const auto n = static_cast<size_t>(s.T) + 1;
    s.alpha.assign(n, 1.0);
    s.alpha_bar.assign(n, 1.0);
    s.one_minus_alpha_bar.assign(n, 0.0);
    for (size_t t = 1; t < n; ++t) {
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
        s.one_minus_alpha_bar[t] = s.one_minus_alpha_bar[t - 1] + s.alpha_bar[t - 1] * s.beta[t];
    }
}

}  // namespace

NoiseSchedule cosine_schedule(int T, double offset, double sigma0, double max_beta) {
    if (T < 1) throw Error("schedule needs T >= 1");
    if (!(offset > 0.0)) throw Error("cosine schedule offset must be positive");
    if (!(max_beta > 0.0 && max_beta < 1.0)) throw Error("max_beta must lie in (0, 1)");
    if (!(sigma0 >= 0.0)) throw Error("sigma0 must be non-negative");
    NoiseSchedule s;
    s.T = T;
    s.offset = offset;
    s.sigma0 = sigma0;
    auto f = [&](int t) {
        const double c = std::cos(((static_cast<double>(t) / T + offset) / (1.0 + offset)) * std::numbers::pi / 2.0);
        return c * c;
    };
    const double f0 = f(0);
    s.beta.assign(static_cast<size_t>(T) + 1, 0.0);
    for (int t = 1; t <= T; ++t) {
        const double prev = f(t - 1) / f0;
        const double cur = f(t) / f0;
        double b = 1.0 - cur / prev;
        if (!(b > 0.0)) b = 1e-12;
        s.beta[static_cast<size_t>(t)] = std::min(b, max_beta);
    }
    fill_cumulative(s);
    s.model_time.resize(static_cast<size_t>(T) + 1);
    for (int t = 0; t <= T; ++t) s.model_time[static_cast<size_t>(t)] = t;
    return s;
}

NoiseSchedule respace(const NoiseSchedule& base, int steps) {
    if (steps < 1 || steps > base.T) {
        throw Error("respaced step count must lie in [1, " + std::to_string(base.T) + "]");
    }
    if (steps == base.T) return base;
    NoiseSchedule s;
    s.T = steps;
    s.offset = base.offset;
    s.sigma0 = base.sigma0;
    const auto n = static_cast<size_t>(steps) + 1;
    s.model_time.assign(n, 0);
    for (int k = 1; k <= steps; ++k) {
        const auto tau = static_cast<int>(std::lround(static_cast<double>(k) * base.T / steps));
        s.model_time[static_cast<size_t>(k)] = std::clamp(tau, 1, base.T);
    }
    s.beta.assign(n, 0.0);
    s.alpha.assign(n, 1.0);
    s.alpha_bar.assign(n, 1.0);
    s.one_minus_alpha_bar.assign(n, 0.0);
    for (size_t k = 1; k < n; ++k) {
        const auto tau = static_cast<size_t>(s.model_time[k]);
        s.alpha_bar[k] = base.alpha_bar[tau];
        s.one_minus_alpha_bar[k] = base.one_minus_alpha_bar[tau];
        s.beta[k] = k == 1 ? s.one_minus_alpha_bar[1] : 1.0 - s.alpha_bar[k] / s.alpha_bar[k - 1];
        s.alpha[k] = 1.0 - s.beta[k];
    }
    return s;
}

PosteriorCoefficients posterior_coefficients(const NoiseSchedule& sched, int t) {
    if (t == 0) throw Error("no posterior step at t = 0");
    sched.check_step(t, 1);
    const auto i = static_cast<size_t>(t);
    const double denom = sched.one_minus_alpha_bar[i];
    PosteriorCoefficients c;
    c.x0_coef = std::sqrt(sched.alpha_bar[i - 1]) * sched.beta[i] / denom;
    c.xt_coef = std::sqrt(sched.alpha[i]) * sched.one_minus_alpha_bar[i - 1] / denom;
    c.variance = sched.one_minus_alpha_bar[i - 1] / denom * sched.beta[i];
    return c;
}

}  // namespace sed
