#pragma once

#include "sed/common.hpp"
#include "sed/corpus.hpp"
#include "sed/denoiser.hpp"
#include "sed/embedding.hpp"
#include "sed/masking.hpp"
#include "sed/schedule.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace sed {

// Anything that maps (x_t, self-conditioning, mask channel, model time) to an
// x0 estimate. The trained denoiser is one; tests plug in oracles.
class X0Estimator {
public:
    virtual ~X0Estimator() = default;
    virtual MatD estimate(const MatD& x_t, const MatD& self_cond, std::span<const double> mask_channel,
                          double model_t) = 0;
};

class ModelEstimator final : public X0Estimator {
public:
    ModelEstimator(const DenoiserConfig& config, const DenoiserParameters<float>& params);
    MatD estimate(const MatD& x_t, const MatD& self_cond, std::span<const double> mask_channel,
                  double model_t) override;

private:
    Denoiser<float> denoiser_;
    const DenoiserParameters<float>* params_;
};

// (1 - s) * uncond + s * cond: the same line as uncond + s * (cond - uncond),
// written so that s = 1 and s = 0 return one branch exactly.
MatD guidance_combine(const MatD& est_uncond, const MatD& est_cond, double scale);

struct ReverseResult {
    MatD x_prev;  // x_{t-1}
    MatD x0_hat;  // guided estimate, carried as the next self-conditioning input
};

// One ancestral step. With any conditioning the unconditional branch (x_t with
// conditioning rows zeroed, zero self-conditioning, zero mask channel) also
// runs and the two estimates are combined with `scale`. Conditioning rows of
// x_{t-1} are reset to `cond_clean`. No noise is drawn when the posterior
// variance is zero (t = 1).
ReverseResult reverse_step(X0Estimator& estimator, const MatD& x_t, const MatD& x0_prev, const MatD& cond_clean,
                           std::span<const uint8_t> mask, int t, double scale, const NoiseSchedule& sched,
                           Rng& rng);

struct SampleRequest {
    int length = 64;
    // Empty for unconditional generation; otherwise `length` entries.
    ConditioningMask mask;
    // Conditioning token per position (read where mask = 1).
    TokenSeq cond_tokens;
    double scale = 1.0;
    int steps = 0;  // 0: full schedule; otherwise an evenly respaced chain
    uint64_t seed = 0;
    int count = 1;
    int threads = 1;
};

struct SampleModel {
    X0Estimator* estimator = nullptr;
    const MatD* embedding = nullptr;  // E
    const MatD* readout = nullptr;    // R
    const NoiseSchedule* schedule = nullptr;
};

// One chain's per-step snapshot.
struct TraceRecord {
    int t = 0;
    TokenSeq tokens;        // argmax decode of the guided x0 estimate at step t
    std::vector<int> rank;  // nn rank of x_{t-1} with respect to the final tokens
};

struct SampleOutput {
    TokenSeq tokens;
    std::vector<TraceRecord> trace;  // filled when tracing
};

// Runs one chain per sample. Sample i uses generator derive_rng(seed, i), so
// results do not depend on the thread count.
std::vector<SampleOutput> sample(const SampleRequest& request, const SampleModel& model);

// Like sample() for a single chain (index 0) but records every
// `every`-th step plus t = 1, with ranks against the `k` nearest neighbors.
SampleOutput trace_reverse(const SampleRequest& request, const SampleModel& model, int every, int k);

// Parses "text with ___N gaps" into a request over `length` positions. Each gap
// becomes N infill positions (a bare ___ is one position); all other units
// condition. Positions after the spec are infill. Throws if the spec is longer
// than `length`.
struct InfillSpec {
    ConditioningMask mask;
    TokenSeq tokens;
};
InfillSpec parse_infill_spec(std::string_view spec, const Vocab& vocab, int length);

// Conditioning prefix followed by infill positions.
InfillSpec prefix_spec(std::string_view prompt, const Vocab& vocab, int length);

void write_trace_csv(std::ostream& out, const SampleOutput& traced, const Vocab& vocab);

}  // namespace sed
