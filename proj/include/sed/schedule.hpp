#pragma once

#include "sed/common.hpp"

#include <cmath>
#include <vector>

namespace sed {

// Precomputed diffusion schedule. Arrays are indexed by step t in [0, T];
// index 0 is the data boundary (alpha_bar[0] = 1, beta[0] = 0).
struct NoiseSchedule {
    int T = 0;
    double offset = 0.008;
    double sigma0 = 1e-2;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    // 1 - alpha_bar[t], accumulated as (1 - alpha_bar[t-1]) + alpha_bar[t-1] * beta[t]
    // so that the t = 1 entry equals beta[1] bit for bit.
    std::vector<double> one_minus_alpha_bar;
    // Timestep fed to the denoiser at chain step t. Identity unless respaced.
    std::vector<int> model_time;

    int steps() const { return T; }
    void check_step(int t, int lowest) const;
};

// Squared-cosine alpha_bar: f(t) = cos^2(((t/T + offset) / (1 + offset)) * pi/2),
// alpha_bar_t = f(t)/f(0); beta_t = 1 - alpha_bar_t/alpha_bar_{t-1} clipped to (0, max_beta].
NoiseSchedule cosine_schedule(int T, double offset = 0.008, double sigma0 = 1e-2, double max_beta = 0.999);

// Ancestral chain over `steps` evenly spaced timesteps of `base` (including T).
// The returned schedule keeps the base model times in `model_time`.
NoiseSchedule respace(const NoiseSchedule& base, int steps);

// x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps, 1 <= t <= T.
template <typename S>
MatT<S> forward_step(const MatT<S>& x_prev, int t, const MatT<S>& eps, const NoiseSchedule& sched) {
    sched.check_step(t, 1);
    const double b = sched.beta[static_cast<size_t>(t)];
    return static_cast<S>(std::sqrt(1.0 - b)) * x_prev + static_cast<S>(std::sqrt(b)) * eps;
}

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, 0 <= t <= T.
template <typename S>
MatT<S> forward_marginal(const MatT<S>& x0, int t, const MatT<S>& eps, const NoiseSchedule& sched) {
    sched.check_step(t, 0);
    if (t == 0) return x0;
    const auto i = static_cast<size_t>(t);
    return static_cast<S>(std::sqrt(sched.alpha_bar[i])) * x0 +
           static_cast<S>(std::sqrt(sched.one_minus_alpha_bar[i])) * eps;
}

struct PosteriorCoefficients {
    double x0_coef = 0.0;
    double xt_coef = 0.0;
    double variance = 0.0;
};

// mean = x0_coef * x0_hat + xt_coef * x_t, variance fixed per step. Throws for t = 0.
PosteriorCoefficients posterior_coefficients(const NoiseSchedule& sched, int t);

template <typename S>
struct Posterior {
    MatT<S> mean;
    double variance = 0.0;
};

template <typename S>
Posterior<S> posterior(const MatT<S>& x0_hat, const MatT<S>& x_t, int t, const NoiseSchedule& sched) {
    const auto c = posterior_coefficients(sched, t);
    return {static_cast<S>(c.x0_coef) * x0_hat + static_cast<S>(c.xt_coef) * x_t, c.variance};
}

}  // namespace sed
