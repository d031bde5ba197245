#pragma once

// Brute-force and analytic reference computations for the test suite. Nothing
// here calls the library routine it is used to check; inputs are plain arrays
// and the arithmetic is redone from the definitions in double precision.

#include "sed/common.hpp"
#include "sed/sampler.hpp"

#include <functional>
#include <span>
#include <vector>

namespace sed::oracle {

// Every oracle reports the bound it claims alongside the value.
struct ChainMoments {
    int t = 0;
    std::vector<double> mean;
    std::vector<double> var;
    int64_t chains = 0;
};

// Runs n_chains independent forward chains x_s = sqrt(1 - beta_s) x_{s-1} +
// sqrt(beta_s) eps from x0 and returns per-coordinate empirical moments at each
// t in `ts` (ascending). betas[s] is used for step s (betas[0] unused).
std::vector<ChainMoments> mc_chain_marginal(std::span<const double> x0, std::span<const int> ts,
                                            std::span<const double> betas, int64_t n_chains, uint64_t seed);

struct GridPosterior {
    double mean = 0.0;
    double var = 0.0;
    int points = 0;
    double tolerance = 0.0;  // claimed absolute error of mean and variance
};

// Bayes posterior of x_{t-1} given x0 and x_t for one coordinate, by Simpson
// quadrature of prior(x_{t-1} | x0) * likelihood(x_t | x_{t-1}). A coarse pass
// locates the mass, a second pass of `points` nodes spans +-8 sd around it.
// t = 1 is the point mass at x0.
GridPosterior grid_posterior(double x0, double x_t, int t, std::span<const double> betas, int points = 10001);

// Central differences at the listed coordinates.
std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& loss,
                                std::vector<double> params, std::span<const size_t> coords, double h);

// Returns the clean embedding of a fixed target sequence, whatever it is fed.
class PerfectDenoiser final : public X0Estimator {
public:
    PerfectDenoiser(const MatD& table, std::span<const TokenId> target);
    MatD estimate(const MatD& x_t, const MatD& self_cond, std::span<const double> mask_channel,
                  double model_t) override;
    int calls() const { return calls_; }

private:
    MatD x0_;
    int calls_ = 0;
};

struct RecoveryResult {
    double token_frequency = 0.0;     // fraction of positions decoded correctly
    double sequence_frequency = 0.0;  // fraction of chains fully correct
    int chains = 0;
};

// Drives the library sampler with PerfectDenoiser over `seeds` chains.
RecoveryResult perfect_denoiser_sim(std::span<const TokenId> target, const MatD& table, const MatD& readout,
                                    const NoiseSchedule& sched, double scale, const ConditioningMask& mask,
                                    int seeds, uint64_t base_seed);

// Exhaustive scan: the k rows nearest to table.row(token), ties by id.
std::vector<TokenId> brute_force_neighbors(const MatD& table, TokenId token, int k);

// Exhaustive nearest row for each point, ties by id.
std::vector<TokenId> brute_force_nearest(const MatD& points, const MatD& table);

}  // namespace sed::oracle
