#include "sed/sampler.hpp"

#include <cctype>
#include <ostream>
#include <thread>

namespace sed {

ModelEstimator::ModelEstimator(const DenoiserConfig& config, const DenoiserParameters<float>& params)
    : denoiser_(config), params_(&params) {}

MatD ModelEstimator::estimate(const MatD& x_t, const MatD& self_cond, std::span<const double> mask_channel,
                              double model_t) {
    const std::vector<float> channel(mask_channel.begin(), mask_channel.end());
    const MatF out = denoiser_.forward(*params_, x_t.cast<float>(), self_cond.cast<float>(), channel, model_t);
    return out.cast<double>();
}

MatD guidance_combine(const MatD& est_uncond, const MatD& est_cond, double scale) {
    if (est_uncond.rows() != est_cond.rows() || est_uncond.cols() != est_cond.cols()) {
        throw Error("guidance_combine: shape mismatch");
    }
    return (1.0 - scale) * est_uncond + scale * est_cond;
}

ReverseResult reverse_step(X0Estimator& estimator, const MatD& x_t, const MatD& x0_prev, const MatD& cond_clean,
                           std::span<const uint8_t> mask, int t, double scale, const NoiseSchedule& sched,
                           Rng& rng) {
    sched.check_step(t, 1);
    const auto n = x_t.rows();
    const double model_t = sched.model_time[static_cast<size_t>(t)];
    const bool conditioned = any_conditioning(mask);

    std::vector<double> channel(static_cast<size_t>(n), 0.0);
    for (size_t i = 0; i < mask.size(); ++i) channel[i] = mask[i] ? 1.0 : 0.0;
    const MatD x_cond = conditioned ? apply_conditioning<double>(x_t, cond_clean, mask) : x_t;
    MatD est = estimator.estimate(x_cond, x0_prev, channel, model_t);
    if (conditioned) {
        const std::vector<double> zeros(static_cast<size_t>(n), 0.0);
        const MatD est_uncond = estimator.estimate(null_conditioning<double>(x_t, mask),
                                                   MatD::Zero(n, x_t.cols()), zeros, model_t);
        est = guidance_combine(est_uncond, est, scale);
    }

    const auto post = posterior<double>(est, x_t, t, sched);
    ReverseResult r{post.mean, est};
    if (post.variance > 0.0) {
        MatD eps(n, x_t.cols());
        fill_normal(eps, rng);
        r.x_prev += std::sqrt(post.variance) * eps;
    }
    if (conditioned) r.x_prev = apply_conditioning<double>(r.x_prev, cond_clean, mask);
    return r;
}

namespace {

struct Chain {
    TokenSeq tokens;
    std::vector<int> steps;
    std::vector<TokenSeq> step_tokens;
    std::vector<MatD> step_iterates;
};

void check_request(const SampleRequest& req, const SampleModel& model) {
    if (!model.estimator || !model.embedding || !model.readout || !model.schedule) {
        throw Error("sample model is incomplete");
    }
    if (req.length < 1) throw Error("sample length must be positive");
    if (!req.mask.empty()) {
        if (static_cast<int>(req.mask.size()) != req.length || static_cast<int>(req.cond_tokens.size()) != req.length) {
            throw Error("conditioning mask and tokens must have one entry per position");
        }
        const auto V = model.embedding->rows();
        for (size_t i = 0; i < req.mask.size(); ++i) {
            if (req.mask[i] && (req.cond_tokens[i] < 0 || req.cond_tokens[i] >= V)) {
                throw Error("conditioning token id " + std::to_string(req.cond_tokens[i]) + " outside [0, " +
                            std::to_string(V) + ")");
            }
        }
    }
    if (!(req.scale >= 0.0 && req.scale <= 8.0)) throw Error("guidance scale must lie in [0, 8]");
    if (req.count < 1) throw Error("sample count must be positive");
}

Chain run_chain(const SampleRequest& req, const SampleModel& model, const NoiseSchedule& sched, uint64_t index,
                int trace_every) {
    Rng rng = derive_rng(req.seed, index);
    const int n = req.length;
    const auto d = model.embedding->cols();
    ConditioningMask mask = req.mask.empty() ? ConditioningMask(static_cast<size_t>(n), 0) : req.mask;
    const bool conditioned = any_conditioning(mask);
    const double scale = conditioned ? req.scale : 1.0;

    MatD cond_clean = MatD::Zero(n, d);
    if (conditioned) {
        TokenSeq placeholder(static_cast<size_t>(n), Vocab::kPad);
        for (size_t i = 0; i < mask.size(); ++i) {
            if (mask[i]) placeholder[i] = req.cond_tokens[i];
        }
        cond_clean = embed_tokens<double>(placeholder, *model.embedding, sched.sigma0, rng);
    }
    MatD x(n, d);
    fill_normal(x, rng);
    if (conditioned) x = apply_conditioning<double>(x, cond_clean, mask);
    MatD x0 = MatD::Zero(n, d);

    Chain chain;
    for (int t = sched.T; t >= 1; --t) {
        auto r = reverse_step(*model.estimator, x, x0, cond_clean, mask, t, scale, sched, rng);
        x = std::move(r.x_prev);
        x0 = std::move(r.x0_hat);
        if (trace_every > 0 && (t % trace_every == 0 || t == 1)) {
            TokenSeq toks = decode_argmax<double>(x0, *model.readout);
            for (size_t i = 0; i < mask.size(); ++i) {
                if (mask[i]) toks[i] = req.cond_tokens[i];
            }
            chain.steps.push_back(t);
            chain.step_tokens.push_back(std::move(toks));
            chain.step_iterates.push_back(x);
        }
    }
    chain.tokens = decode_argmax<double>(x0, *model.readout);
    for (size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) chain.tokens[i] = req.cond_tokens[i];
    }
    return chain;
}

NoiseSchedule chain_schedule(const SampleRequest& req, const SampleModel& model) {
    return req.steps == 0 ? *model.schedule : respace(*model.schedule, req.steps);
}

}  // namespace

std::vector<SampleOutput> sample(const SampleRequest& request, const SampleModel& model) {
    check_request(request, model);
    const NoiseSchedule sched = chain_schedule(request, model);
    std::vector<SampleOutput> out(static_cast<size_t>(request.count));
    const int threads = std::max(1, std::min(request.threads, request.count));
    auto work = [&](int w) {
        for (int i = w; i < request.count; i += threads) {
            out[static_cast<size_t>(i)].tokens = run_chain(request, model, sched, static_cast<uint64_t>(i), 0).tokens;
        }
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
        for (int w = 0; w < threads; ++w) {
            pool.emplace_back([&, w] {
                try {
                    work(w);
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
    return out;
}

SampleOutput trace_reverse(const SampleRequest& request, const SampleModel& model, int every, int k) {
    check_request(request, model);
    if (every < 1) throw Error("trace interval must be positive");
    const NoiseSchedule sched = chain_schedule(request, model);
    Chain chain = run_chain(request, model, sched, 0, every);
    NeighborCache neighbors(*model.embedding, std::min<int>(k, static_cast<int>(model.embedding->rows())));
    SampleOutput out;
    out.tokens = chain.tokens;
    for (size_t s = 0; s < chain.steps.size(); ++s) {
        TraceRecord rec;
        rec.t = chain.steps[s];
        rec.tokens = std::move(chain.step_tokens[s]);
        rec.rank = neighbors.ranks(chain.step_iterates[s], chain.tokens);
        out.trace.push_back(std::move(rec));
    }
    return out;
}

namespace {

void append_text(std::string_view text, const Vocab& vocab, InfillSpec& spec) {
    if (text.empty()) return;
    for (TokenId id : vocab.encode(text)) {
        spec.tokens.push_back(id);
        spec.mask.push_back(1);
    }
}

}  // namespace

InfillSpec parse_infill_spec(std::string_view text, const Vocab& vocab, int length) {
    InfillSpec spec;
    size_t pos = 0;
    while (pos < text.size()) {
        const size_t gap = text.find("___", pos);
        if (gap == std::string_view::npos) {
            append_text(text.substr(pos), vocab, spec);
            break;
        }
        append_text(text.substr(pos, gap - pos), vocab, spec);
        size_t end = gap + 3;
        while (end < text.size() && text[end] == '_') ++end;
        size_t digits = end;
        while (digits < text.size() && std::isdigit(static_cast<unsigned char>(text[digits]))) ++digits;
        int width = 1;
        if (digits > end) width = std::stoi(std::string(text.substr(end, digits - end)));
        if (width < 1) throw Error("infill gap width must be positive");
        for (int i = 0; i < width; ++i) {
            spec.tokens.push_back(Vocab::kPad);
            spec.mask.push_back(0);
        }
        pos = digits;
    }
    if (length <= 0) length = static_cast<int>(spec.mask.size());
    if (static_cast<int>(spec.mask.size()) > length) {
        throw Error("infill spec covers " + std::to_string(spec.mask.size()) + " positions but the sample length is " +
                    std::to_string(length));
    }
    spec.tokens.resize(static_cast<size_t>(length), Vocab::kPad);
    spec.mask.resize(static_cast<size_t>(length), 0);
    return spec;
}

InfillSpec prefix_spec(std::string_view prompt, const Vocab& vocab, int length) {
    InfillSpec spec;
    append_text(prompt, vocab, spec);
    if (static_cast<int>(spec.mask.size()) > length) throw Error("prompt is longer than the sample length");
    spec.tokens.resize(static_cast<size_t>(length), Vocab::kPad);
    spec.mask.resize(static_cast<size_t>(length), 0);
    return spec;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

void write_trace_csv(std::ostream& out, const SampleOutput& traced, const Vocab& vocab) {
    out << "t,position,token_id,token_str,rank\n";
    for (const auto& rec : traced.trace) {
        for (size_t i = 0; i < rec.tokens.size(); ++i) {
            out << rec.t << ',' << i << ',' << rec.tokens[i] << ',' << csv_field(vocab.unit(rec.tokens[i])) << ','
                << rec.rank[i] << '\n';
        }
    }
}

}  // namespace sed
