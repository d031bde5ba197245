#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sed::oracle {

std::vector<ChainMoments> mc_chain_marginal(std::span<const double> x0, std::span<const int> ts,
                                            std::span<const double> betas, int64_t n_chains, uint64_t seed) {
    const size_t d = x0.size();
    std::vector<ChainMoments> out;
    for (int t : ts) {
        ChainMoments m;
        m.t = t;
        m.chains = n_chains;
        m.mean.assign(d, 0.0);
        m.var.assign(d, 0.0);
        out.push_back(std::move(m));
    }
    // Welford accumulators per recorded step and coordinate.
    std::vector<std::vector<double>> m2(ts.size(), std::vector<double>(d, 0.0));
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int t_max = ts.empty() ? 0 : ts.back();
    std::vector<double> x(d);
    for (int64_t c = 0; c < n_chains; ++c) {
        std::copy(x0.begin(), x0.end(), x.begin());
        size_t next = 0;
        while (next < ts.size() && ts[next] == 0) {
            for (size_t k = 0; k < d; ++k) {
                const double delta = x[k] - out[next].mean[k];
                out[next].mean[k] += delta / static_cast<double>(c + 1);
                m2[next][k] += delta * (x[k] - out[next].mean[k]);
            }
            ++next;
        }
        for (int s = 1; s <= t_max; ++s) {
            const double keep = std::sqrt(1.0 - betas[static_cast<size_t>(s)]);
            const double noise = std::sqrt(betas[static_cast<size_t>(s)]);
            for (size_t k = 0; k < d; ++k) x[k] = keep * x[k] + noise * normal(gen);
            while (next < ts.size() && ts[next] == s) {
                for (size_t k = 0; k < d; ++k) {
                    const double delta = x[k] - out[next].mean[k];
                    out[next].mean[k] += delta / static_cast<double>(c + 1);
                    m2[next][k] += delta * (x[k] - out[next].mean[k]);
                }
                ++next;
            }
        }
    }
    for (size_t i = 0; i < ts.size(); ++i) {
        for (size_t k = 0; k < d; ++k) {
            out[i].var[k] = n_chains > 1 ? m2[i][k] / static_cast<double>(n_chains - 1) : 0.0;
        }
    }
    return out;
}

namespace {

struct Moments {
    double mean, var;
};

// Simpson's rule over [lo, hi] with an odd number of nodes.
Moments simpson_moments(const std::function<double(double)>& log_density, double lo, double hi, int points) {
    if (points % 2 == 0) ++points;
    const double h = (hi - lo) / (points - 1);
    std::vector<double> xs(static_cast<size_t>(points));
    std::vector<double> ld(static_cast<size_t>(points));
    double peak = -INFINITY;
    for (int i = 0; i < points; ++i) {
        xs[static_cast<size_t>(i)] = lo + h * i;
        ld[static_cast<size_t>(i)] = log_density(xs[static_cast<size_t>(i)]);
        peak = std::max(peak, ld[static_cast<size_t>(i)]);
    }
    double z = 0.0;
    double s1 = 0.0;
    for (int i = 0; i < points; ++i) {
        const double w = (i == 0 || i == points - 1) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        const double p = w * std::exp(ld[static_cast<size_t>(i)] - peak);
        z += p;
        s1 += p * xs[static_cast<size_t>(i)];
    }
    const double mean = s1 / z;
    double s2 = 0.0;
    for (int i = 0; i < points; ++i) {
        const double w = (i == 0 || i == points - 1) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        const double dx = xs[static_cast<size_t>(i)] - mean;
        s2 += w * std::exp(ld[static_cast<size_t>(i)] - peak) * dx * dx;
    }
    return {mean, s2 / z};
}

}  // namespace

GridPosterior grid_posterior(double x0, double x_t, int t, std::span<const double> betas, int points) {
    GridPosterior g;
    g.points = points;
    if (t == 1) {
        g.mean = x0;
        g.var = 0.0;
        g.tolerance = 0.0;
        return g;
    }
    // Cumulative signal retention up to t - 1, from the betas directly.
    double keep_prev = 1.0;
    for (int s = 1; s <= t - 1; ++s) keep_prev *= 1.0 - betas[static_cast<size_t>(s)];
    const double beta = betas[static_cast<size_t>(t)];
    const double prior_mean = std::sqrt(keep_prev) * x0;
    const double prior_var = 1.0 - keep_prev;
    const double a = std::sqrt(1.0 - beta);
    auto log_density = [&](double y) {
        const double p = y - prior_mean;
        const double l = x_t - a * y;
        return -0.5 * p * p / prior_var - 0.5 * l * l / beta;
    };
    // Coarse pass over the union of the prior and likelihood supports.
    const double prior_sd = std::sqrt(prior_var);
    const double like_center = x_t / a;
    const double like_sd = std::sqrt(beta) / a;
    const double lo = std::min(prior_mean - 10 * prior_sd, like_center - 10 * like_sd);
    const double hi = std::max(prior_mean + 10 * prior_sd, like_center + 10 * like_sd);
    const Moments coarse = simpson_moments(log_density, lo, hi, 200001);
    const double sd = std::sqrt(coarse.var);
    const Moments fine = simpson_moments(log_density, coarse.mean - 8 * sd, coarse.mean + 8 * sd, points);
    g.mean = fine.mean;
    g.var = fine.var;
    // Truncation at 8 sd leaves ~1e-14 of the mass; Simpson error at 10^4
    // nodes is far below that for a Gaussian integrand.
    g.tolerance = 1e-9 * std::max(1.0, std::abs(fine.mean) + fine.var);
    return g;
}

std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& loss,
                                std::vector<double> params, std::span<const size_t> coords, double h) {
    std::vector<double> g;
    for (size_t c : coords) {
        const double saved = params[c];
        params[c] = saved + h;
        const double up = loss(params);
        params[c] = saved - h;
        const double down = loss(params);
        params[c] = saved;
        g.push_back((up - down) / (2.0 * h));
    }
    return g;
}

PerfectDenoiser::PerfectDenoiser(const MatD& table, std::span<const TokenId> target)
    : x0_(static_cast<Eigen::Index>(target.size()), table.cols()) {
    for (size_t i = 0; i < target.size(); ++i) {
        for (Eigen::Index k = 0; k < table.cols(); ++k) x0_(static_cast<Eigen::Index>(i), k) = table(target[i], k);
    }
}

MatD PerfectDenoiser::estimate(const MatD&, const MatD&, std::span<const double>, double) {
    ++calls_;
    return x0_;
}

RecoveryResult perfect_denoiser_sim(std::span<const TokenId> target, const MatD& table, const MatD& readout,
                                    const NoiseSchedule& sched, double scale, const ConditioningMask& mask,
                                    int seeds, uint64_t base_seed) {
    PerfectDenoiser oracle(table, target);
    SampleModel model{&oracle, &table, &readout, &sched};
    RecoveryResult r;
    r.chains = seeds;
    int64_t hits = 0;
    int exact = 0;
    for (int s = 0; s < seeds; ++s) {
        SampleRequest req;
        req.length = static_cast<int>(target.size());
        req.scale = scale;
        req.seed = base_seed + static_cast<uint64_t>(s);
        if (!mask.empty()) {
            req.mask = mask;
            req.cond_tokens.assign(target.begin(), target.end());
        }
        const auto out = sample(req, model).front().tokens;
        int ok = 0;
        for (size_t i = 0; i < target.size(); ++i) ok += out[i] == target[i] ? 1 : 0;
        hits += ok;
        exact += ok == static_cast<int>(target.size()) ? 1 : 0;
    }
    r.token_frequency = static_cast<double>(hits) / (static_cast<double>(seeds) * static_cast<double>(target.size()));
    r.sequence_frequency = static_cast<double>(exact) / seeds;
    return r;
}

std::vector<TokenId> brute_force_neighbors(const MatD& table, TokenId token, int k) {
    std::vector<std::pair<double, TokenId>> d;
    for (Eigen::Index v = 0; v < table.rows(); ++v) {
        double s = 0.0;
        for (Eigen::Index c = 0; c < table.cols(); ++c) {
            const double diff = table(v, c) - table(token, c);
            s += diff * diff;
        }
        d.emplace_back(s, static_cast<TokenId>(v));
    }
    std::sort(d.begin(), d.end());
    std::vector<TokenId> out;
    for (int i = 0; i < k && i < static_cast<int>(d.size()); ++i) out.push_back(d[static_cast<size_t>(i)].second);
    return out;
}

std::vector<TokenId> brute_force_nearest(const MatD& points, const MatD& table) {
    std::vector<TokenId> out;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        double best = INFINITY;
        TokenId arg = 0;
        for (Eigen::Index v = 0; v < table.rows(); ++v) {
            double s = 0.0;
            for (Eigen::Index c = 0; c < table.cols(); ++c) {
                const double diff = points(i, c) - table(v, c);
                s += diff * diff;
            }
            if (s < best) {
                best = s;
                arg = static_cast<TokenId>(v);
            }
        }
        out.push_back(arg);
    }
    return out;
}

}  // namespace sed::oracle
