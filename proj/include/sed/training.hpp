#pragma once

#include "sed/common.hpp"
#include "sed/corpus.hpp"
#include "sed/denoiser.hpp"
#include "sed/embedding.hpp"
#include "sed/masking.hpp"
#include "sed/schedule.hpp"

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace sed {

// Mean over infill positions (mask = 0) and coordinates of (x0 - x0_hat)^2.
// Zero when every position conditions.
template <typename S>
double diffusion_loss(const MatT<S>& x0, const MatT<S>& x0_hat, std::span<const uint8_t> mask);

// d(diffusion_loss)/d(x0_hat).
template <typename S>
MatT<S> diffusion_loss_grad(const MatT<S>& x0, const MatT<S>& x0_hat, std::span<const uint8_t> mask);

// Mean per-position cross-entropy of softmax(x0 R^T) against `tokens`. When
// `d_readout` is given, d(loss)/dR is accumulated into it; x0 (and so E)
// receives no gradient.
template <typename S>
double recon_loss(std::span<const TokenId> tokens, const MatT<S>& x0, const MatT<S>& readout,
                  MatT<S>* d_readout = nullptr);

struct ObjectiveOptions {
    int max_spans = 5;
    double cfg_drop_prob = 0.1;
    bool self_conditioning = true;
    // Weights of the two self-conditioning passes in the diffusion loss.
    std::array<double, 2> pass_weights{0.5, 0.5};
    bool clean_target = false;  // regress onto E[w] instead of the sigma0-noised x0
};

struct SequenceLoss {
    double diffusion = 0.0;  // weighted over passes
    double pass1 = 0.0;
    double pass2 = 0.0;
    double recon = 0.0;
    int t = 0;
    bool dropped = false;
    int span_count = 1;
};

// Everything the objective reads besides the parameters.
template <typename S>
struct ObjectiveContext {
    const Denoiser<S>* denoiser = nullptr;
    const MatT<S>* embedding = nullptr;
    const NoiseSchedule* schedule = nullptr;
    ObjectiveOptions options;
};

// One sequence of the SED objective. Draws, in order: the span mask, x0 noise,
// t, the forward-process noise and the guidance-dropout coin, so runs with and
// without self-conditioning see the same randomness. Gradients are
// accumulated into `d_params` / `d_readout` when given.
template <typename S>
SequenceLoss sequence_objective(const ObjectiveContext<S>& ctx, const DenoiserParameters<S>& params,
                                const MatT<S>& readout, std::span<const TokenId> tokens, Rng& rng,
                                ParamGrad<S>* d_params, MatT<S>* d_readout);

struct TrainConfig {
    int seq_len = 64;
    int batch_tokens = 1024;
    int64_t steps = 2000;
    double pad_rate = 0.1;
    ObjectiveOptions objective;
    double learning_rate = 1e-3;
    int64_t warmup_steps = 100;
    double min_lr_ratio = 0.1;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    uint64_t seed = 0;
    int64_t log_every = 10;
    int64_t checkpoint_every = 500;
    int threads = 1;

    int batch_size() const { return batch_tokens / seq_len; }
    void validate() const;
};

// Learning rate at optimizer step `step` (0-based): linear warmup, then cosine
// decay to min_lr_ratio * learning_rate at `steps`.
double learning_rate_at(const TrainConfig& config, int64_t step);

struct ModelState {
    DenoiserConfig denoiser_config;
    NoiseSchedule schedule;
    EmbeddingMatrix embedding;
    MatF readout;
    DenoiserParameters<float> params;
};

struct OptimizerState {
    std::vector<float> m, v;                // denoiser parameters
    std::vector<float> readout_m, readout_v;
};

struct TrainState {
    ModelState model;
    OptimizerState optimizer;
    int64_t step = 0;
    size_t data_cursor = 0;
};

// Fresh state: denoiser from init_params(seed), R = E.
TrainState init_train_state(const DenoiserConfig& denoiser, const NoiseSchedule& schedule,
                            EmbeddingMatrix embedding, uint64_t seed);

struct StepMetrics {
    int64_t step = 0;
    double loss = 0.0;
    double diffusion = 0.0;
    double diffusion_pass1 = 0.0;
    double diffusion_pass2 = 0.0;
    double recon = 0.0;
    double learning_rate = 0.0;
    double grad_norm = 0.0;
    double seconds = 0.0;
    int tokens = 0;
    std::vector<int> t_histogram;  // 10 equal-width bins over [1, T]
};

// Reads `batch_size` sequences from the stream. Pad placement for sequence i of
// step s comes from its own derived generator.
std::vector<TokenSeq> assemble_batch(TokenStream& stream, const TrainConfig& config, int64_t step);

// One optimizer update on `batch`. Per-sequence randomness is derived from
// (seed, state.step, index), and per-sequence gradients are summed in index
// order, so the result does not depend on `config.threads`. Throws on a
// non-finite loss.
StepMetrics train_step(TrainState& state, std::span<const TokenSeq> batch, const TrainConfig& config);

// Loss terms and gradients of one batch without updating anything.
struct BatchGradient {
    StepMetrics metrics;
    std::vector<float> params;
    MatF readout;
};
BatchGradient batch_gradient(const TrainState& state, std::span<const TokenSeq> batch, const TrainConfig& config);

struct TrainHooks {
    std::function<void(const StepMetrics&)> on_log;
    std::function<void(const TrainState&)> on_checkpoint;
};

// Runs train_step until state.step == config.steps, resuming from the state's
// step and data cursor.
void train(TrainState& state, TokenStream& stream, const TrainConfig& config, const TrainHooks& hooks);

// Determinism mode: set by SED_DETERMINISTIC=1, forces a single worker thread.
bool determinism_mode();

}  // namespace sed
