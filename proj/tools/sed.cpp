// Command-line entry point: prepare, train, sample, eval, viz-forward and
// gen-grammar. Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include "sed/checkpoint.hpp"
#include "sed/config.hpp"
#include "sed/eval.hpp"
#include "sed/pipeline.hpp"
#include "sed/sampler.hpp"
#include "sed/viz.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace sed;

namespace {

std::vector<double> parse_scales(const std::string& list) {
    std::vector<double> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw CLI::ValidationError("--scale", "not a number: '" + item + "'");
        }
    }
    if (out.empty()) throw CLI::ValidationError("--scale", "empty scale list");
    return out;
}

bool parse_on_off(const std::string& v) {
    if (v == "on") return true;
    if (v == "off") return false;
    throw CLI::ValidationError("--self-cond", "expected on or off");
}

// Accepts a run directory (with a checkpoint/ child) or a checkpoint directory.
std::string checkpoint_dir(const std::string& path) {
    if (fs::exists(fs::path(path) / "manifest.json")) return path;
    if (fs::exists(fs::path(path) / "checkpoint" / "manifest.json")) return (fs::path(path) / "checkpoint").string();
    throw Error("no checkpoint found at " + path);
}

void write_json(const fs::path& path, const Json& doc) {
    std::ofstream out(path);
    out << doc.dump(2) << "\n";
    if (!out) throw Error("failed writing " + path.string());
}

Json metrics_record(const StepMetrics& m) {
    return {{"step", m.step},
            {"loss", m.loss},
            {"diffusion", m.diffusion},
            {"diffusion_pass1", m.diffusion_pass1},
            {"diffusion_pass2", m.diffusion_pass2},
            {"recon", m.recon},
            {"lr", m.learning_rate},
            {"grad_norm", m.grad_norm},
            {"t_histogram", m.t_histogram},
            {"tokens_per_sec", m.seconds > 0 ? m.tokens / m.seconds : 0.0}};
}

// Drops records past `step` so a resumed run does not duplicate them.
void truncate_metrics(const fs::path& path, int64_t step) {
    if (!fs::exists(path)) return;
    std::ifstream in(path);
    std::vector<std::string> keep;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (Json::parse(line).at("step").get<int64_t>() <= step) keep.push_back(line);
    }
    in.close();
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : keep) out << l << "\n";
}

struct LoadedModel {
    Checkpoint ck;
    MatD embedding;
    MatD readout;
    std::unique_ptr<ModelEstimator> estimator;
    SampleModel model;

    explicit LoadedModel(const std::string& path) : ck(load_checkpoint(checkpoint_dir(path))) {
        embedding = ck.state.model.embedding.values();
        readout = ck.state.model.readout.cast<double>();
        estimator = std::make_unique<ModelEstimator>(ck.config.denoiser, ck.state.model.params);
        model = SampleModel{estimator.get(), &embedding, &readout, &ck.state.model.schedule};
    }
};

std::string scale_suffix(double s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, ".s%g", s);
    return buf;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-conditioned embedding diffusion over token embeddings"};
    app.require_subcommand(1);

    // prepare
    auto* prep = app.add_subcommand("prepare", "Build the vocabulary and diffusion space for a corpus");
    std::string prep_corpus, prep_out, prep_validation, prep_base, prep_space = "random", prep_gran = "char";
    int prep_vocab = 128, prep_dim = 32;
    uint64_t prep_seed = 0;
    prep->add_option("--corpus", prep_corpus, "Training corpus, one document per line")->required();
    prep->add_option("--out", prep_out, "Output directory")->required();
    prep->add_option("--validation", prep_validation, "Validation corpus (default: hold out the tail)");
    prep->add_option("--config", prep_base, "Base config to extend");
    // Without --config these fall back to the defaults below; with it, only the
    // flags actually given override the base config.
    auto* prep_vocab_opt = prep->add_option("--vocab-size", prep_vocab, "Total vocabulary size including PAD and UNK");
    auto* prep_gran_opt =
        prep->add_option("--granularity", prep_gran, "char or word")->check(CLI::IsMember({"char", "word"}));
    auto* prep_space_opt = prep->add_option("--space", prep_space, "random, pretrained or bits")
                               ->check(CLI::IsMember({"random", "pretrained", "bits"}));
    auto* prep_dim_opt = prep->add_option("--d-embed", prep_dim, "Embedding dimension (ignored for bits)");
    auto* prep_seed_opt = prep->add_option("--seed", prep_seed, "Seed for the embedding space");

    // train
    auto* tr = app.add_subcommand("train", "Train a model");
    std::string tr_config, tr_out, tr_space, tr_self_cond;
    bool tr_resume = false;
    int64_t tr_steps = -1;
    int tr_dim = -1, tr_spans = -1, tr_threads = -1;
    uint64_t tr_seed = 0;
    tr->add_option("--config", tr_config, "Run config (JSON)");
    tr->add_option("--out", tr_out, "Run directory")->required();
    tr->add_flag("--resume", tr_resume, "Continue from the run directory's checkpoint");
    tr->add_option("--steps", tr_steps, "Total optimizer steps");
    tr->add_option("--space", tr_space, "Override space.kind")->check(CLI::IsMember({"random", "pretrained", "bits"}));
    tr->add_option("--self-cond", tr_self_cond, "on or off")->check(CLI::IsMember({"on", "off"}));
    tr->add_option("--d-embed", tr_dim, "Override the embedding dimension");
    tr->add_option("--max-spans", tr_spans, "Override the maximum span count");
    auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "Override the training seed");
    tr->add_option("--threads", tr_threads, "Worker threads (SED_DETERMINISTIC=1 forces 1)");

    // sample
    auto* sm = app.add_subcommand("sample", "Generate samples from a checkpoint");
    std::string sm_ckpt, sm_prompt, sm_infill, sm_scales = "1", sm_out, sm_trace;
    int sm_steps = -1, sm_n = 1, sm_length = -1, sm_trace_every = 10, sm_threads = 1;
    uint64_t sm_seed = 0;
    sm->add_option("--checkpoint", sm_ckpt, "Checkpoint or run directory")->required();
    auto* sm_prompt_opt = sm->add_option("--prompt", sm_prompt, "Conditioning prefix");
    auto* sm_infill_opt = sm->add_option("--infill-spec", sm_infill, "Text with ___N gaps to fill");
    sm_prompt_opt->excludes(sm_infill_opt);
    sm->add_option("--scale", sm_scales, "Guidance scale or comma-separated list");
    sm->add_option("--steps", sm_steps, "Reverse steps (default: the schedule's T)");
    sm->add_option("--seed", sm_seed, "Sampling seed");
    sm->add_option("-n", sm_n, "Samples per scale")->check(CLI::PositiveNumber);
    sm->add_option("--length", sm_length, "Sequence length (default: config sample.length, or the infill spec)");
    sm->add_option("--out", sm_out, "Output text file (default: stdout)");
    sm->add_option("--trace", sm_trace, "Write the reverse-process CSV of the first sample here");
    sm->add_option("--trace-every", sm_trace_every, "Trace every k-th step")->check(CLI::PositiveNumber);
    sm->add_option("--threads", sm_threads, "Parallel chains")->check(CLI::PositiveNumber);

    // eval
    auto* ev = app.add_subcommand("eval", "Score samples against the validation data");
    std::string ev_ckpt, ev_task = "unconditional", ev_scales, ev_out;
    int ev_n = -1, ev_steps = -1, ev_threads = 1;
    uint64_t ev_seed = 0;
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint or run directory")->required();
    ev->add_option("--task", ev_task, "unconditional or suffix-infill")
        ->check(CLI::IsMember({"unconditional", "suffix-infill"}));
    ev->add_option("-n", ev_n, "Samples per scale")->check(CLI::PositiveNumber);
    ev->add_option("--scales", ev_scales, "Comma-separated guidance scales");
    ev->add_option("--steps", ev_steps, "Reverse steps (default: the schedule's T)");
    ev->add_option("--seed", ev_seed, "Evaluation seed");
    ev->add_option("--out", ev_out, "Report directory")->required();
    ev->add_option("--threads", ev_threads, "Parallel chains")->check(CLI::PositiveNumber);

    // viz-forward
    auto* vz = app.add_subcommand("viz-forward", "Nearest-neighbor ranks along the forward process");
    std::string vz_ckpt, vz_emb, vz_vocab, vz_text, vz_out, vz_gran = "char";
    int vz_steps = 1000, vz_k = 128, vz_every = 1;
    uint64_t vz_seed = 0;
    double vz_sigma0 = 1e-2;
    auto* vz_ckpt_opt = vz->add_option("--checkpoint", vz_ckpt, "Checkpoint or run directory");
    auto* vz_emb_opt = vz->add_option("--embedding", vz_emb, "Embedding file from prepare");
    vz_ckpt_opt->excludes(vz_emb_opt);
    vz->add_option("--vocab", vz_vocab, "Vocabulary file (with --embedding)");
    vz->add_option("--granularity", vz_gran, "char or word (with --embedding)")->check(CLI::IsMember({"char", "word"}));
    vz->add_option("--text", vz_text, "Text to diffuse")->required();
    vz->add_option("--steps", vz_steps, "Forward steps T")->check(CLI::PositiveNumber);
    vz->add_option("--K", vz_k, "Neighbor count")->check(CLI::PositiveNumber);
    vz->add_option("--every", vz_every, "Record every k-th step")->check(CLI::PositiveNumber);
    vz->add_option("--seed", vz_seed, "Noise seed");
    vz->add_option("--out", vz_out, "Output prefix (writes .csv and .html)")->required();

    // gen-grammar
    auto* gg = app.add_subcommand("gen-grammar", "Write a synthetic grammar corpus");
    int gg_lines = 2000;
    uint64_t gg_seed = 0;
    std::string gg_out;
    gg->add_option("--lines", gg_lines, "Number of sentences")->check(CLI::PositiveNumber);
    gg->add_option("--seed", gg_seed, "Grammar seed");
    gg->add_option("--out", gg_out, "Output file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*prep) {
            RunConfig cfg = prep_base.empty() ? RunConfig{} : load_run_config(prep_base);
            cfg.corpus.train_path = fs::absolute(prep_corpus).string();
            if (!prep_validation.empty()) cfg.corpus.validation_path = fs::absolute(prep_validation).string();
            const bool fresh = prep_base.empty();
            if (fresh || *prep_vocab_opt) cfg.corpus.vocab_size = prep_vocab;
            if (fresh || *prep_gran_opt) cfg.corpus.granularity = parse_granularity(prep_gran);
            if (fresh || *prep_space_opt) cfg.space.kind = parse_space_kind(prep_space);
            if (fresh || *prep_dim_opt) cfg.space.dim = prep_dim;
            if (fresh || *prep_seed_opt) cfg.space.seed = prep_seed;
            const auto corpus = prepare_corpus(cfg.corpus);
            const auto space = build_space(cfg.space, corpus.vocab, corpus.train);
            cfg.denoiser.d_embed = space.dim();
            cfg.validate();
            fs::create_directories(prep_out);
            corpus.vocab.save((fs::path(prep_out) / "vocab.txt").string());
            save_embedding_file((fs::path(prep_out) / "embedding.semb").string(), space);
            save_run_config((fs::path(prep_out) / "config.json").string(), cfg);
            std::cout << "vocab V=" << corpus.vocab.size() << " space=" << to_string(cfg.space.kind) << " D=" << space.dim()
                      << " train_docs=" << corpus.train.size() << " validation_docs=" << corpus.validation.size()
                      << "\n";
            return 0;
        }

        if (*tr) {
            const fs::path run(tr_out);
            const fs::path ckpt = run / "checkpoint";
            RunConfig cfg;
            TrainState state;
            Vocab vocab;
            if (tr_resume) {
                Checkpoint ck = load_checkpoint(ckpt.string());
                cfg = ck.config;
                state = std::move(ck.state);
                vocab = std::move(ck.vocab);
                if (tr_steps >= 0) cfg.train.steps = tr_steps;
                if (tr_threads > 0) cfg.train.threads = tr_threads;
                cfg.validate();
            } else {
                if (tr_config.empty()) throw CLI::RequiredError("--config");
                cfg = load_run_config(tr_config);
                if (tr_steps >= 0) cfg.train.steps = tr_steps;
                if (!tr_space.empty()) cfg.space.kind = parse_space_kind(tr_space);
                if (!tr_self_cond.empty()) cfg.train.objective.self_conditioning = parse_on_off(tr_self_cond);
                if (tr_dim > 0) cfg.space.dim = tr_dim;
                if (tr_spans > 0) cfg.train.objective.max_spans = tr_spans;
                if (*tr_seed_opt) cfg.train.seed = tr_seed;
                if (tr_threads > 0) cfg.train.threads = tr_threads;
                const auto corpus = prepare_corpus(cfg.corpus);
                vocab = corpus.vocab;
                auto space = build_space(cfg.space, vocab, corpus.train);
                cfg.denoiser.d_embed = space.dim();
                cfg.validate();
                state = init_train_state(cfg.denoiser, cfg.schedule.build(), std::move(space), cfg.train.seed);
            }
            const auto corpus = prepare_corpus(cfg.corpus);
            TokenStream stream(corpus.train, vocab);
            fs::create_directories(run);
            save_run_config((run / "config.json").string(), cfg);
            const fs::path metrics_path = run / "metrics.jsonl";
            if (tr_resume) {
                truncate_metrics(metrics_path, state.step);
            } else {
                fs::remove(metrics_path);
            }
            std::ofstream metrics(metrics_path, std::ios::app);
            TrainHooks hooks;
            hooks.on_log = [&](const StepMetrics& m) {
                metrics << metrics_record(m).dump() << "\n";
                metrics.flush();
                std::fprintf(stderr, "step %lld loss %.4f diffusion %.4f recon %.4f lr %.2e\n",
                             static_cast<long long>(m.step), m.loss, m.diffusion, m.recon, m.learning_rate);
            };
            hooks.on_checkpoint = [&](const TrainState& s) { save_checkpoint(ckpt.string(), cfg, s, vocab); };
            train(state, stream, cfg.train, hooks);
            if (state.step == 0 || !fs::exists(ckpt)) save_checkpoint(ckpt.string(), cfg, state, vocab);
            std::cout << "trained to step " << state.step << "; checkpoint at " << ckpt.string() << "\n";
            return 0;
        }

        if (*sm) {
            LoadedModel lm(sm_ckpt);
            const auto& cfg = lm.ck.config;
            SampleRequest req;
            req.length = sm_length > 0 ? sm_length : cfg.sample.length;
            if (*sm_infill_opt) {
                auto spec = parse_infill_spec(sm_infill, lm.ck.vocab, sm_length > 0 ? sm_length : 0);
                req.length = static_cast<int>(spec.mask.size());
                req.mask = std::move(spec.mask);
                req.cond_tokens = std::move(spec.tokens);
            } else if (*sm_prompt_opt) {
                auto spec = prefix_spec(sm_prompt, lm.ck.vocab, req.length);
                req.mask = std::move(spec.mask);
                req.cond_tokens = std::move(spec.tokens);
            }
            if (req.length > cfg.denoiser.max_len) {
                throw Error("sample length " + std::to_string(req.length) + " exceeds the model's max_len " +
                            std::to_string(cfg.denoiser.max_len));
            }
            req.steps = sm_steps > 0 ? sm_steps : 0;
            req.seed = sm_seed;
            req.count = sm_n;
            req.threads = sm_threads;
            const auto scales = parse_scales(sm_scales);
            for (double s : scales) {
                req.scale = s;
                const auto outputs = sample(req, lm.model);
                std::ostringstream text;
                for (const auto& o : outputs) text << lm.ck.vocab.decode(o.tokens, true) << "\n";
                if (sm_out.empty()) {
                    std::cout << text.str();
                    continue;
                }
                fs::path path(sm_out);
                if (scales.size() > 1) path = path.parent_path() / (path.stem().string() + scale_suffix(s) + path.extension().string());
                std::ofstream out(path);
                out << text.str();
                if (!out) throw Error("failed writing " + path.string());
                write_json(path.string() + ".json",
                           {{"checkpoint_id", lm.ck.id},
                            {"seed", req.seed},
                            {"scale", s},
                            {"T", req.steps == 0 ? lm.ck.state.model.schedule.T : req.steps},
                            {"count", req.count},
                            {"length", req.length},
                            {"mask", req.mask.empty() ? std::string() : mask_to_string(req.mask)}});
            }
            if (!sm_trace.empty()) {
                req.scale = scales.front();
                const auto traced = trace_reverse(req, lm.model, sm_trace_every, 128);
                std::ofstream out(sm_trace);
                write_trace_csv(out, traced, lm.ck.vocab);
                if (!out) throw Error("failed writing " + sm_trace);
            }
            return 0;
        }

        if (*ev) {
            LoadedModel lm(ev_ckpt);
            RunConfig cfg = lm.ck.config;
            cfg.eval.task = parse_eval_task(ev_task);
            if (ev_n > 0) cfg.eval.n_samples = ev_n;
            if (!ev_scales.empty()) cfg.eval.scales = parse_scales(ev_scales);
            cfg.eval.seed = ev_seed;
            if (ev_steps > 0) cfg.sample.steps = ev_steps;
            cfg.sample.threads = ev_threads;
            cfg.validate();
            const auto corpus = prepare_corpus(cfg.corpus);
            EvalInputs in{&lm.model, &lm.ck.vocab, corpus.train, corpus.validation, cfg, lm.ck.id};
            const EvalReport report = eval_report(in);
            fs::create_directories(ev_out);
            write_json(fs::path(ev_out) / "report.json", to_json(report));
            std::ofstream txt(fs::path(ev_out) / "report.txt");
            write_report_table(txt, report);
            save_run_config((fs::path(ev_out) / "config.json").string(), cfg);
            write_report_table(std::cout, report);
            return 0;
        }

        if (*vz) {
            Vocab vocab;
            EmbeddingMatrix emb;
            double sigma0 = vz_sigma0;
            if (*vz_ckpt_opt) {
                Checkpoint ck = load_checkpoint(checkpoint_dir(vz_ckpt));
                vocab = std::move(ck.vocab);
                emb = ck.state.model.embedding;
                sigma0 = ck.config.schedule.sigma0;
            } else if (*vz_emb_opt) {
                if (vz_vocab.empty()) throw CLI::RequiredError("--vocab");
                vocab = Vocab::load(vz_vocab, parse_granularity(vz_gran));
                emb = load_embedding_file(vz_emb, vocab.size());
            } else {
                throw CLI::RequiredError("--checkpoint or --embedding");
            }
            const NoiseSchedule sched = cosine_schedule(vz_steps, 0.008, sigma0);
            const TokenSeq tokens = vocab.encode(vz_text);
            const auto traj = forward_trajectory(tokens, emb.values(), sched, vz_k, vz_every, vz_seed);
            std::ofstream csv(vz_out + ".csv");
            write_forward_csv(csv, traj, vocab);
            std::ofstream html(vz_out + ".html");
            write_forward_html(html, traj, vocab);
            if (!csv || !html) throw Error("failed writing " + vz_out + ".{csv,html}");
            std::cout << "D=" << emb.dim() << " K=" << traj.k
                      << " mean intermediate-rank steps=" << intermediate_rank_count(traj) << "\n";
            return 0;
        }

        if (*gg) {
            std::ofstream out(gg_out);
            for (const auto& line : generate_grammar_corpus(gg_lines, gg_seed)) out << line << "\n";
            if (!out) throw Error("failed writing " + gg_out);
            return 0;
        }
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
