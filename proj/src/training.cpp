#include "sed/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <thread>

namespace sed {

template <typename S>
double diffusion_loss(const MatT<S>& x0, const MatT<S>& x0_hat, std::span<const uint8_t> mask) {
    if (x0.rows() != x0_hat.rows() || x0.cols() != x0_hat.cols() || static_cast<size_t>(x0.rows()) != mask.size()) {
        throw Error("diffusion_loss: shape mismatch");
    }
    double sum = 0.0;
    int64_t count = 0;
    for (Eigen::Index i = 0; i < x0.rows(); ++i) {
        if (mask[static_cast<size_t>(i)]) continue;
        for (Eigen::Index k = 0; k < x0.cols(); ++k) {
            const double d = static_cast<double>(x0(i, k)) - static_cast<double>(x0_hat(i, k));
            sum += d * d;
        }
        count += x0.cols();
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

template <typename S>
MatT<S> diffusion_loss_grad(const MatT<S>& x0, const MatT<S>& x0_hat, std::span<const uint8_t> mask) {
    MatT<S> g = MatT<S>::Zero(x0.rows(), x0.cols());
    const int infill = count_infill(mask);
    if (infill == 0) return g;
    const S scale = static_cast<S>(2.0 / (static_cast<double>(infill) * static_cast<double>(x0.cols())));
    for (Eigen::Index i = 0; i < x0.rows(); ++i) {
        if (!mask[static_cast<size_t>(i)]) g.row(i) = scale * (x0_hat.row(i) - x0.row(i));
    }
    return g;
}

template <typename S>
double recon_loss(std::span<const TokenId> tokens, const MatT<S>& x0, const MatT<S>& readout, MatT<S>* d_readout) {
    if (static_cast<size_t>(x0.rows()) != tokens.size()) throw Error("recon_loss: shape mismatch");
    if (tokens.empty()) return 0.0;
    MatT<S> l = logits(x0, readout);
    const auto n = static_cast<double>(tokens.size());
    double total = 0.0;
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
        const TokenId w = tokens[static_cast<size_t>(i)];
        if (w < 0 || w >= l.cols()) throw Error("recon_loss: token id outside the readout");
        const S mx = l.row(i).maxCoeff();
        l.row(i) = (l.row(i).array() - mx).exp();
        const S z = l.row(i).sum();
        total += std::log(static_cast<double>(z)) - std::log(static_cast<double>(l(i, w)));
        l.row(i) /= z;
        l(i, w) -= S(1);
    }
    if (d_readout) d_readout->noalias() += (l.transpose() * x0) / static_cast<S>(n);
    return total / n;
}

template double diffusion_loss<float>(const MatF&, const MatF&, std::span<const uint8_t>);
template double diffusion_loss<double>(const MatD&, const MatD&, std::span<const uint8_t>);
template MatF diffusion_loss_grad<float>(const MatF&, const MatF&, std::span<const uint8_t>);
template MatD diffusion_loss_grad<double>(const MatD&, const MatD&, std::span<const uint8_t>);
template double recon_loss<float>(std::span<const TokenId>, const MatF&, const MatF&, MatF*);
template double recon_loss<double>(std::span<const TokenId>, const MatD&, const MatD&, MatD*);

template <typename S>
SequenceLoss sequence_objective(const ObjectiveContext<S>& ctx, const DenoiserParameters<S>& params,
                                const MatT<S>& readout, std::span<const TokenId> tokens, Rng& rng,
                                ParamGrad<S>* d_params, MatT<S>* d_readout) {
    const auto& sched = *ctx.schedule;
    const auto& opt = ctx.options;
    const MatT<S>& table = *ctx.embedding;
    const int n = static_cast<int>(tokens.size());
    const auto d = table.cols();

    SequenceLoss out;
    const SpanDraw draw = sample_spans(n, opt.max_spans, rng);
    const auto& mask = draw.mask;
    out.span_count = draw.span_count;
    const MatT<S> x0 = embed_tokens<S>(tokens, table, sched.sigma0, rng);
    out.t = std::uniform_int_distribution<int>(1, sched.T)(rng);
    MatT<S> eps(n, d);
    fill_normal(eps, rng);
    out.dropped = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < opt.cfg_drop_prob;

    MatT<S> target = x0;
    if (opt.clean_target) {
        Rng unused(0);
        target = embed_tokens<S>(tokens, table, 0.0, unused);
    }

    MatT<S> x_t = apply_conditioning<S>(forward_marginal<S>(x0, out.t, eps, sched), x0, mask);
    std::vector<S> channel(static_cast<size_t>(n), S(0));
    if (out.dropped) {
        x_t = null_conditioning<S>(x_t, mask);
    } else {
        for (int i = 0; i < n; ++i) channel[static_cast<size_t>(i)] = mask[static_cast<size_t>(i)] ? S(1) : S(0);
    }
    const double model_t = sched.model_time[static_cast<size_t>(out.t)];
    const bool grads = d_params != nullptr;
    const MatT<S> zero = MatT<S>::Zero(n, d);

    typename Denoiser<S>::Cache c1;
    const MatT<S> est1 = ctx.denoiser->forward(params, x_t, zero, channel, model_t, grads ? &c1 : nullptr);
    out.pass1 = diffusion_loss<S>(target, est1, mask);

    if (opt.self_conditioning && !out.dropped) {
        // The first estimate enters the second pass as a constant: no gradient
        // flows back through it.
        typename Denoiser<S>::Cache c2;
        const MatT<S> est2 = ctx.denoiser->forward(params, x_t, est1, channel, model_t, grads ? &c2 : nullptr);
        out.pass2 = diffusion_loss<S>(target, est2, mask);
        out.diffusion = opt.pass_weights[0] * out.pass1 + opt.pass_weights[1] * out.pass2;
        if (grads) {
            ctx.denoiser->backward(params, c1,
                                   static_cast<S>(opt.pass_weights[0]) * diffusion_loss_grad<S>(target, est1, mask),
                                   *d_params);
            ctx.denoiser->backward(params, c2,
                                   static_cast<S>(opt.pass_weights[1]) * diffusion_loss_grad<S>(target, est2, mask),
                                   *d_params);
        }
    } else {
        // Single pass with zero self-conditioning carries the full weight.
        out.pass2 = out.pass1;
        out.diffusion = out.pass1;
        if (grads) ctx.denoiser->backward(params, c1, diffusion_loss_grad<S>(target, est1, mask), *d_params);
    }
    out.recon = recon_loss<S>(tokens, x0, readout, d_readout);
    return out;
}

template SequenceLoss sequence_objective<float>(const ObjectiveContext<float>&, const DenoiserParameters<float>&,
                                                const MatF&, std::span<const TokenId>, Rng&, ParamGrad<float>*,
                                                MatF*);
template SequenceLoss sequence_objective<double>(const ObjectiveContext<double>&, const DenoiserParameters<double>&,
                                                 const MatD&, std::span<const TokenId>, Rng&, ParamGrad<double>*,
                                                 MatD*);

void TrainConfig::validate() const {
    if (seq_len < 1) throw Error("train.seq_len must be positive");
    if (batch_tokens < seq_len || batch_tokens % seq_len != 0) {
        throw Error("train.batch_tokens must be a positive multiple of seq_len");
    }
    if (!(pad_rate >= 0.0 && pad_rate < 1.0)) throw Error("train.pad_rate must lie in [0, 1)");
    if (!(objective.cfg_drop_prob >= 0.0 && objective.cfg_drop_prob < 1.0)) {
        throw Error("train.cfg_drop_prob must lie in [0, 1)");
    }
    if (objective.max_spans < 1 || objective.max_spans > seq_len) throw Error("train.max_spans must lie in [1, seq_len]");
    if (steps < 0) throw Error("train.steps must be non-negative");
    if (!(learning_rate > 0.0)) throw Error("train.learning_rate must be positive");
    if (threads < 1) throw Error("train.threads must be positive");
}

double learning_rate_at(const TrainConfig& c, int64_t step) {
    if (c.warmup_steps > 0 && step < c.warmup_steps) {
        return c.learning_rate * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
    }
    const int64_t span = std::max<int64_t>(c.steps - c.warmup_steps, 1);
    const double progress = std::clamp(static_cast<double>(step - c.warmup_steps) / static_cast<double>(span), 0.0, 1.0);
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return c.learning_rate * (c.min_lr_ratio + (1.0 - c.min_lr_ratio) * cosine);
}

TrainState init_train_state(const DenoiserConfig& denoiser, const NoiseSchedule& schedule, EmbeddingMatrix embedding,
                            uint64_t seed) {
    if (embedding.dim() != denoiser.d_embed) {
        throw Error("embedding width " + std::to_string(embedding.dim()) + " does not match d_embed " +
                    std::to_string(denoiser.d_embed));
    }
    TrainState s;
    s.model.denoiser_config = denoiser;
    s.model.schedule = schedule;
    s.model.readout = embedding.cast<float>();
    s.model.embedding = std::move(embedding);
    s.model.params = init_params<float>(denoiser, seed);
    const size_t np = s.model.params.values.size();
    const size_t nr = static_cast<size_t>(s.model.readout.size());
    s.optimizer.m.assign(np, 0.0f);
    s.optimizer.v.assign(np, 0.0f);
    s.optimizer.readout_m.assign(nr, 0.0f);
    s.optimizer.readout_v.assign(nr, 0.0f);
    return s;
}

namespace {

constexpr uint64_t kDataStream = 1ull << 40;

template <typename F>
void parallel_for(int count, int threads, F&& body) {
    threads = std::min(threads, count);
    if (threads <= 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (int i = w; i < count; i += threads) body(i);
            } catch (...) {
                errors[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

int effective_threads(const TrainConfig& c) { return determinism_mode() ? 1 : c.threads; }

}  // namespace

bool determinism_mode() {
    const char* v = std::getenv("SED_DETERMINISTIC");
    return v != nullptr && std::string(v) != "0" && std::string(v) != "";
}

std::vector<TokenSeq> assemble_batch(TokenStream& stream, const TrainConfig& config, int64_t step) {
    std::vector<TokenSeq> batch;
    for (int i = 0; i < config.batch_size(); ++i) {
        Rng rng = derive_rng(config.seed, static_cast<uint64_t>(step), kDataStream + static_cast<uint64_t>(i));
        batch.push_back(make_training_sequence(stream, config.seq_len, config.pad_rate, rng));
    }
    return batch;
}

BatchGradient batch_gradient(const TrainState& state, std::span<const TokenSeq> batch, const TrainConfig& config) {
    if (batch.empty()) throw Error("empty training batch");
    const auto& model = state.model;
    const Denoiser<float> denoiser(model.denoiser_config);
    const MatF table = model.embedding.cast<float>();
    ObjectiveContext<float> ctx{&denoiser, &table, &model.schedule, config.objective};

    const int count = static_cast<int>(batch.size());
    std::vector<SequenceLoss> losses(static_cast<size_t>(count));
    std::vector<ParamGrad<float>> grads(static_cast<size_t>(count));
    std::vector<MatF> readout_grads(static_cast<size_t>(count));
    parallel_for(count, effective_threads(config), [&](int i) {
        const auto u = static_cast<size_t>(i);
        grads[u] = zeros_like(model.params);
        readout_grads[u] = MatF::Zero(model.readout.rows(), model.readout.cols());
        Rng rng = derive_rng(config.seed, static_cast<uint64_t>(state.step), static_cast<uint64_t>(i));
        losses[u] = sequence_objective<float>(ctx, model.params, model.readout, batch[u], rng, &grads[u],
                                              &readout_grads[u]);
    });

    BatchGradient out;
    out.params.assign(model.params.values.size(), 0.0f);
    out.readout = MatF::Zero(model.readout.rows(), model.readout.cols());
    auto& m = out.metrics;
    m.t_histogram.assign(10, 0);
    const float inv = 1.0f / static_cast<float>(count);
    for (int i = 0; i < count; ++i) {
        const auto u = static_cast<size_t>(i);
        const auto& g = grads[u].values;
        for (size_t k = 0; k < g.size(); ++k) out.params[k] += g[k] * inv;
        out.readout += readout_grads[u] * inv;
        const auto& l = losses[u];
        m.diffusion += l.diffusion / count;
        m.diffusion_pass1 += l.pass1 / count;
        m.diffusion_pass2 += l.pass2 / count;
        m.recon += l.recon / count;
        const int bin = std::min(9, (l.t - 1) * 10 / model.schedule.T);
        ++m.t_histogram[static_cast<size_t>(bin)];
        m.tokens += static_cast<int>(batch[u].size());
    }
    m.loss = m.diffusion + m.recon;
    if (!std::isfinite(m.loss)) {
        std::string detail = "non-finite loss at step " + std::to_string(state.step) + ":";
        for (int i = 0; i < count; ++i) {
            const auto& l = losses[static_cast<size_t>(i)];
            detail += " [seq " + std::to_string(i) + " t=" + std::to_string(l.t) +
                      " diffusion=" + std::to_string(l.diffusion) + " recon=" + std::to_string(l.recon) + "]";
        }
        throw Error(detail);
    }
    return out;
}

StepMetrics train_step(TrainState& state, std::span<const TokenSeq> batch, const TrainConfig& config) {
    const auto start = std::chrono::steady_clock::now();
    BatchGradient bg = batch_gradient(state, batch, config);
    auto& model = state.model;
    auto& opt = state.optimizer;

    double sq = 0.0;
    for (float g : bg.params) sq += static_cast<double>(g) * g;
    for (Eigen::Index k = 0; k < bg.readout.size(); ++k) sq += static_cast<double>(bg.readout.data()[k]) * bg.readout.data()[k];
    const double norm = std::sqrt(sq);
    const double clip = (config.grad_clip > 0.0 && norm > config.grad_clip) ? config.grad_clip / norm : 1.0;

    const double lr = learning_rate_at(config, state.step);
    const double t = static_cast<double>(state.step + 1);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    auto update = [&](float& p, float& m, float& v, double g, bool decay) {
        g *= clip;
        m = static_cast<float>(config.beta1 * m + (1.0 - config.beta1) * g);
        v = static_cast<float>(config.beta2 * v + (1.0 - config.beta2) * g * g);
        const double step = (m / c1) / (std::sqrt(v / c2) + config.adam_eps);
        const double wd = decay ? config.weight_decay * p : 0.0;
        p = static_cast<float>(p - lr * (step + wd));
    };
    for (const auto& spec : model.params.layout->tensors()) {
        for (size_t k = spec.offset; k < spec.offset + spec.size(); ++k) {
            update(model.params.values[k], opt.m[k], opt.v[k], bg.params[k], spec.decay);
        }
    }
    for (Eigen::Index k = 0; k < model.readout.size(); ++k) {
        const auto u = static_cast<size_t>(k);
        update(model.readout.data()[k], opt.readout_m[u], opt.readout_v[u], bg.readout.data()[k], false);
    }

    ++state.step;
    StepMetrics m = std::move(bg.metrics);
    m.step = state.step;
    m.learning_rate = lr;
    m.grad_norm = norm;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return m;
}

void train(TrainState& state, TokenStream& stream, const TrainConfig& config, const TrainHooks& hooks) {
    config.validate();
    stream.seek(state.data_cursor);
    while (state.step < config.steps) {
        const auto batch = assemble_batch(stream, config, state.step);
        const StepMetrics m = train_step(state, batch, config);
        state.data_cursor = stream.cursor();
        const bool last = state.step == config.steps;
        if (hooks.on_log && config.log_every > 0 && (state.step % config.log_every == 0 || last)) hooks.on_log(m);
        if (hooks.on_checkpoint && config.checkpoint_every > 0 && (state.step % config.checkpoint_every == 0 || last)) {
            hooks.on_checkpoint(state);
        }
    }
}

}  // namespace sed
