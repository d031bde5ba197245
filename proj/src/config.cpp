#include "sed/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace sed {

EvalTask parse_eval_task(std::string_view name) {
    if (name == "unconditional") return EvalTask::unconditional;
    if (name == "suffix-infill") return EvalTask::suffix_infill;
    throw Error("unknown eval task '" + std::string(name) + "' (expected unconditional or suffix-infill)");
}

std::string_view to_string(EvalTask task) {
    return task == EvalTask::unconditional ? "unconditional" : "suffix-infill";
}

int effective_dim(const SpaceConfig& space, int vocab_size) {
    return space.kind == SpaceKind::bits ? bits_dim(vocab_size) : space.dim;
}

void RunConfig::validate() const {
    if (config_version != kConfigVersion) {
        throw Error("unsupported config_version " + std::to_string(config_version));
    }
    if (corpus.vocab_size < 3) throw Error("corpus.vocab_size must be at least 3");
    if (!(corpus.validation_fraction >= 0.0 && corpus.validation_fraction < 1.0)) {
        throw Error("corpus.validation_fraction must lie in [0, 1)");
    }
    if (space.kind != SpaceKind::bits && space.dim < 1) throw Error("space.dim must be positive");
    denoiser.validate();
    train.validate();
    if (train.seq_len > denoiser.max_len) throw Error("train.seq_len exceeds denoiser.max_len");
    if (sample.length < 1 || sample.length > denoiser.max_len) throw Error("sample.length must lie in [1, max_len]");
    if (sample.steps < 0 || sample.steps > schedule.T) throw Error("sample.steps must lie in [0, schedule.T]");
    if (!(sample.scale >= 0.0 && sample.scale <= 8.0)) throw Error("sample.scale must lie in [0, 8]");
    if (sample.count < 1) throw Error("sample.count must be positive");
    if (eval.n_samples < 1) throw Error("eval.n_samples must be positive");
    if (eval.scales.empty()) throw Error("eval.scales must not be empty");
    for (double s : eval.scales) {
        if (!(s >= 0.0 && s <= 8.0)) throw Error("eval.scales entries must lie in [0, 8]");
    }
    if (eval.scorer_order < 1) throw Error("eval.scorer_order must be positive");
    if (!(eval.scorer_k > 0.0)) throw Error("eval.scorer_k must be positive");
    if (eval.prefix_len < 0 || eval.prefix_len >= sample.length) {
        throw Error("eval.prefix_len must lie in [0, sample.length)");
    }
}

namespace {

// Reads fields out of one JSON object and rejects whatever it did not read.
class Section {
public:
    Section(const Json& doc, std::string name) : name_(std::move(name)) {
        if (!doc.is_object()) throw Error("config section '" + name_ + "' must be an object");
        doc_ = &doc;
    }

    template <typename T>
    void get(const std::string& key, T& field) {
        seen_.insert(key);
        auto it = doc_->find(key);
        if (it == doc_->end()) return;
        try {
            field = it->template get<T>();
        } catch (const nlohmann::json::exception&) {
            throw Error("config key '" + name_ + "." + key + "' has the wrong type");
        }
    }

    template <typename T, typename Parse>
    void get_enum(const std::string& key, T& field, Parse parse) {
        std::string s;
        bool present = doc_->contains(key);
        get(key, s);
        if (present) field = parse(s);
    }

    const Json* child(const std::string& key) {
        seen_.insert(key);
        auto it = doc_->find(key);
        return it == doc_->end() ? nullptr : &*it;
    }

    void finish() const {
        for (auto it = doc_->begin(); it != doc_->end(); ++it) {
            if (!seen_.count(it.key())) throw Error("unknown config key '" + name_ + "." + it.key() + "'");
        }
    }

private:
    const Json* doc_ = nullptr;
    std::string name_;
    std::set<std::string> seen_;
};

}  // namespace

Json to_json(const RunConfig& c) {
    Json j;
    j["config_version"] = c.config_version;
    j["corpus"] = {
        {"train_path", c.corpus.train_path},
        {"validation_path", c.corpus.validation_path},
        {"granularity", std::string(to_string(c.corpus.granularity))},
        {"vocab_size", c.corpus.vocab_size},
        {"validation_fraction", c.corpus.validation_fraction},
    };
    j["space"] = {
        {"kind", std::string(to_string(c.space.kind))},
        {"dim", c.space.dim},
        {"seed", c.space.seed},
        {"skipgram_window", c.space.skipgram.window},
        {"skipgram_negatives", c.space.skipgram.negatives},
        {"skipgram_steps", c.space.skipgram.steps},
        {"skipgram_learning_rate", c.space.skipgram.learning_rate},
    };
    j["schedule"] = {
        {"T", c.schedule.T},
        {"offset", c.schedule.offset},
        {"sigma0", c.schedule.sigma0},
        {"max_beta", c.schedule.max_beta},
    };
    const auto& d = c.denoiser;
    j["denoiser"] = {
        {"layers", d.layers},
        {"d_model", d.d_model},
        {"heads", d.heads},
        {"head_size", d.head_size},
        {"d_embed", d.d_embed},
        {"max_len", d.max_len},
        {"ffw_multiplier", d.ffw_multiplier},
        {"use_mask_channel", d.use_mask_channel},
        {"rel_buckets", d.rel_buckets},
        {"rel_max_distance", d.rel_max_distance},
    };
    const auto& t = c.train;
    j["train"] = {
        {"seq_len", t.seq_len},
        {"batch_tokens", t.batch_tokens},
        {"steps", t.steps},
        {"pad_rate", t.pad_rate},
        {"max_spans", t.objective.max_spans},
        {"cfg_drop_prob", t.objective.cfg_drop_prob},
        {"self_conditioning", t.objective.self_conditioning},
        {"clean_target", t.objective.clean_target},
        {"learning_rate", t.learning_rate},
        {"warmup_steps", t.warmup_steps},
        {"min_lr_ratio", t.min_lr_ratio},
        {"weight_decay", t.weight_decay},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"adam_eps", t.adam_eps},
        {"grad_clip", t.grad_clip},
        {"seed", t.seed},
        {"log_every", t.log_every},
        {"checkpoint_every", t.checkpoint_every},
        {"threads", t.threads},
    };
    j["sample"] = {
        {"scale", c.sample.scale},
        {"steps", c.sample.steps},
        {"length", c.sample.length},
        {"count", c.sample.count},
        {"seed", c.sample.seed},
        {"threads", c.sample.threads},
    };
    j["eval"] = {
        {"task", std::string(to_string(c.eval.task))},
        {"n_samples", c.eval.n_samples},
        {"scales", c.eval.scales},
        {"prefix_len", c.eval.prefix_len},
        {"scorer_order", c.eval.scorer_order},
        {"scorer_k", c.eval.scorer_k},
        {"seed", c.eval.seed},
    };
    return j;
}

RunConfig run_config_from_json(const Json& doc) {
    RunConfig c;
    Section root(doc, "<root>");
    root.get("config_version", c.config_version);
    if (const Json* s = root.child("corpus")) {
        Section sec(*s, "corpus");
        sec.get("train_path", c.corpus.train_path);
        sec.get("validation_path", c.corpus.validation_path);
        sec.get_enum("granularity", c.corpus.granularity, parse_granularity);
        sec.get("vocab_size", c.corpus.vocab_size);
        sec.get("validation_fraction", c.corpus.validation_fraction);
        sec.finish();
    }
    if (const Json* s = root.child("space")) {
        Section sec(*s, "space");
        sec.get_enum("kind", c.space.kind, parse_space_kind);
        sec.get("dim", c.space.dim);
        sec.get("seed", c.space.seed);
        sec.get("skipgram_window", c.space.skipgram.window);
        sec.get("skipgram_negatives", c.space.skipgram.negatives);
        sec.get("skipgram_steps", c.space.skipgram.steps);
        sec.get("skipgram_learning_rate", c.space.skipgram.learning_rate);
        sec.finish();
    }
    if (const Json* s = root.child("schedule")) {
        Section sec(*s, "schedule");
        sec.get("T", c.schedule.T);
        sec.get("offset", c.schedule.offset);
        sec.get("sigma0", c.schedule.sigma0);
        sec.get("max_beta", c.schedule.max_beta);
        sec.finish();
    }
    if (const Json* s = root.child("denoiser")) {
        Section sec(*s, "denoiser");
        auto& d = c.denoiser;
        sec.get("layers", d.layers);
        sec.get("d_model", d.d_model);
        sec.get("heads", d.heads);
        sec.get("head_size", d.head_size);
        sec.get("d_embed", d.d_embed);
        sec.get("max_len", d.max_len);
        sec.get("ffw_multiplier", d.ffw_multiplier);
        sec.get("use_mask_channel", d.use_mask_channel);
        sec.get("rel_buckets", d.rel_buckets);
        sec.get("rel_max_distance", d.rel_max_distance);
        sec.finish();
    }
    if (const Json* s = root.child("train")) {
        Section sec(*s, "train");
        auto& t = c.train;
        sec.get("seq_len", t.seq_len);
        sec.get("batch_tokens", t.batch_tokens);
        sec.get("steps", t.steps);
        sec.get("pad_rate", t.pad_rate);
        sec.get("max_spans", t.objective.max_spans);
        sec.get("cfg_drop_prob", t.objective.cfg_drop_prob);
        sec.get("self_conditioning", t.objective.self_conditioning);
        sec.get("clean_target", t.objective.clean_target);
        sec.get("learning_rate", t.learning_rate);
        sec.get("warmup_steps", t.warmup_steps);
        sec.get("min_lr_ratio", t.min_lr_ratio);
        sec.get("weight_decay", t.weight_decay);
        sec.get("beta1", t.beta1);
        sec.get("beta2", t.beta2);
        sec.get("adam_eps", t.adam_eps);
        sec.get("grad_clip", t.grad_clip);
        sec.get("seed", t.seed);
        sec.get("log_every", t.log_every);
        sec.get("checkpoint_every", t.checkpoint_every);
        sec.get("threads", t.threads);
        sec.finish();
    }
    if (const Json* s = root.child("sample")) {
        Section sec(*s, "sample");
        sec.get("scale", c.sample.scale);
        sec.get("steps", c.sample.steps);
        sec.get("length", c.sample.length);
        sec.get("count", c.sample.count);
        sec.get("seed", c.sample.seed);
        sec.get("threads", c.sample.threads);
        sec.finish();
    }
    if (const Json* s = root.child("eval")) {
        Section sec(*s, "eval");
        sec.get_enum("task", c.eval.task, parse_eval_task);
        sec.get("n_samples", c.eval.n_samples);
        sec.get("scales", c.eval.scales);
        sec.get("prefix_len", c.eval.prefix_len);
        sec.get("scorer_order", c.eval.scorer_order);
        sec.get("scorer_k", c.eval.scorer_k);
        sec.get("seed", c.eval.seed);
        sec.finish();
    }
    root.finish();
    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path);
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("config " + path + " is not valid JSON: " + e.what());
    }
    RunConfig c = run_config_from_json(doc);
    const auto base = std::filesystem::path(path).parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
    };
    resolve(c.corpus.train_path);
    resolve(c.corpus.validation_path);
    return c;
}

void save_run_config(const std::string& path, const RunConfig& config) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write config " + path);
    out << to_json(config).dump(2) << "\n";
    if (!out) throw Error("failed writing config " + path);
}

}  // namespace sed
