#include "sed/eval.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>

namespace sed {

namespace {

constexpr TokenId kBoundary = -1;

TokenSeq strip_pads(std::span<const TokenId> seq) {
    TokenSeq out;
    for (TokenId id : seq) {
        if (id != Vocab::kPad) out.push_back(id);
    }
    return out;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double standard_error(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

double unigram_entropy(std::span<const TokenSeq> samples) {
    std::map<TokenId, int64_t> counts;
    int64_t total = 0;
    for (const auto& s : samples) {
        for (TokenId id : s) {
            if (id == Vocab::kPad) continue;
            ++counts[id];
            ++total;
        }
    }
    if (total == 0) throw Error("unigram_entropy: no tokens to count");
    double h = 0.0;
    for (const auto& [id, c] : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return std::max(h, 0.0);
}

NGramScorer::NGramScorer(int order, double k, int vocab_size)
    : order_(order), k_(k), vocab_size_(vocab_size), tables_(static_cast<size_t>(std::max(order, 0))) {
    if (order < 1) throw Error("n-gram order must be positive");
    if (!(k > 0.0)) throw Error("add-k constant must be positive");
    if (vocab_size < 2) throw Error("scorer vocabulary needs at least one non-pad token");
    fingerprint_ = fnv1a64(std::to_string(order) + "/" + std::to_string(k) + "/" + std::to_string(vocab_size));
}

std::string NGramScorer::key(std::span<const TokenId> context) const {
    return std::string(reinterpret_cast<const char*>(context.data()), context.size() * sizeof(TokenId));
}

void NGramScorer::add(std::span<const TokenId> sequence) {
    const TokenSeq toks = strip_pads(sequence);
    TokenSeq padded(static_cast<size_t>(order_ - 1), kBoundary);
    padded.insert(padded.end(), toks.begin(), toks.end());
    for (size_t i = static_cast<size_t>(order_ - 1); i < padded.size(); ++i) {
        const TokenId w = padded[i];
        if (w < 1 || w >= vocab_size_) throw Error("scorer: token id outside the vocabulary");
        for (int c = 0; c < order_; ++c) {
            const std::span<const TokenId> ctx(padded.data() + i - static_cast<size_t>(c), static_cast<size_t>(c));
            auto& counts = tables_[static_cast<size_t>(c)][key(ctx)];
            ++counts.total;
            ++counts.next[w];
        }
    }
    fingerprint_ = fnv1a64(key(toks), fingerprint_);
}

double NGramScorer::prob(std::span<const TokenId> history, TokenId token) const {
    if (token < 1 || token >= vocab_size_) throw Error("scorer: token id outside the vocabulary");
    const double support = static_cast<double>(vocab_size_ - 1);
    const double mass = k_ * support;
    TokenSeq ctx(static_cast<size_t>(order_ - 1), kBoundary);
    const size_t take = std::min(history.size(), ctx.size());
    std::copy(history.end() - static_cast<std::ptrdiff_t>(take), history.end(),
              ctx.end() - static_cast<std::ptrdiff_t>(take));
    double p = 1.0 / support;
    for (int c = 0; c < order_; ++c) {
        const std::span<const TokenId> h(ctx.data() + ctx.size() - static_cast<size_t>(c), static_cast<size_t>(c));
        const auto& table = tables_[static_cast<size_t>(c)];
        auto it = table.find(key(h));
        double n_h = 0.0;
        double n_hw = 0.0;
        if (it != table.end()) {
            n_h = static_cast<double>(it->second.total);
            auto jt = it->second.next.find(token);
            if (jt != it->second.next.end()) n_hw = static_cast<double>(jt->second);
        }
        p = (n_hw + mass * p) / (n_h + mass);
    }
    return p;
}

double NGramScorer::sequence_nll(std::span<const TokenId> sequence, int64_t* scored_tokens) const {
    const TokenSeq toks = strip_pads(sequence);
    double nll = 0.0;
    for (size_t i = 0; i < toks.size(); ++i) {
        nll -= std::log(prob(std::span<const TokenId>(toks.data(), i), toks[i]));
    }
    if (scored_tokens) *scored_tokens = static_cast<int64_t>(toks.size());
    return nll;
}

NGramScorer train_scorer(std::span<const TokenSeq> corpus, int order, double k, int vocab_size) {
    NGramScorer scorer(order, k, vocab_size);
    for (const auto& s : corpus) scorer.add(s);
    return scorer;
}

NllEstimate proxy_nll(std::span<const TokenSeq> samples, const NGramScorer& scorer) {
    NllEstimate est;
    double total = 0.0;
    std::vector<double> per_sequence;
    for (const auto& s : samples) {
        int64_t n = 0;
        const double nll = scorer.sequence_nll(s, &n);
        if (n == 0) continue;
        total += nll;
        est.tokens += n;
        per_sequence.push_back(nll / static_cast<double>(n));
    }
    if (est.tokens == 0) throw Error("proxy_nll: no tokens to score");
    est.mean = total / static_cast<double>(est.tokens);
    est.se = standard_error(per_sequence);
    return est;
}

const MetricRow& EvalReport::row(const std::string& label) const {
    for (const auto& r : rows) {
        if (r.label == label) return r;
    }
    throw Error("report has no row " + label);
}

double entropy_standard_error(std::span<const TokenSeq> samples) {
    constexpr size_t kFolds = 10;
    if (samples.size() < kFolds) return 0.0;
    std::vector<double> folds;
    for (size_t f = 0; f < kFolds; ++f) {
        const size_t lo = f * samples.size() / kFolds;
        const size_t hi = (f + 1) * samples.size() / kFolds;
        const auto part = samples.subspan(lo, hi - lo);
        bool any = false;
        for (const auto& s : part) {
            for (TokenId id : s) any = any || id != Vocab::kPad;
        }
        if (any) folds.push_back(unigram_entropy(part));
    }
    return standard_error(folds);
}

MetricRow score_rows(std::string label, std::span<const TokenSeq> samples, const NGramScorer& scorer) {
    MetricRow row;
    row.label = std::move(label);
    row.entropy = unigram_entropy(samples);
    row.entropy_se = entropy_standard_error(samples);
    const auto nll = proxy_nll(samples, scorer);
    row.nll = nll.mean;
    row.nll_se = nll.se;
    row.tokens = nll.tokens;
    row.sequences = static_cast<int>(samples.size());
    return row;
}

std::vector<TokenSeq> reference_slices(std::span<const std::string> docs, const Vocab& vocab, int count, int length) {
    TokenStream stream(docs, vocab);
    std::vector<TokenSeq> out;
    for (int i = 0; i < count; ++i) {
        TokenSeq s(static_cast<size_t>(length));
        for (auto& id : s) id = stream.next();
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

std::string scale_label(double s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "sed s=%g", s);
    return buf;
}

}  // namespace

EvalReport eval_report(const EvalInputs& in) {
    if (!in.model || !in.vocab) throw Error("eval_report: missing model or vocabulary");
    if (in.validation_docs.empty()) throw Error("eval_report: no validation documents");
    const auto& cfg = in.config;
    const auto& ev = cfg.eval;
    const int length = cfg.sample.length;
    const int V = in.vocab->size();

    EvalReport report;
    report.task = std::string(to_string(ev.task));
    report.space = std::string(to_string(cfg.space.kind));
    report.self_conditioning = cfg.train.objective.self_conditioning;
    report.checkpoint_id = in.checkpoint_id;
    report.config_fingerprint = hex64(fnv1a64(to_json(cfg).dump()));
    report.vocab_size = V;
    report.sample_length = length;
    report.scorer_order = ev.scorer_order;
    report.scorer_k = ev.scorer_k;

    std::vector<TokenSeq> train_seqs;
    for (const auto& d : in.train_docs) train_seqs.push_back(in.vocab->encode(d));
    const NGramScorer scorer = train_scorer(train_seqs, ev.scorer_order, ev.scorer_k, V);

    const int prefix = ev.task == EvalTask::suffix_infill ? ev.prefix_len : 0;
    auto suffix = [&](const TokenSeq& s) { return TokenSeq(s.begin() + prefix, s.end()); };

    const auto reference = reference_slices(in.validation_docs, *in.vocab, ev.n_samples, length);
    std::vector<TokenSeq> ref_scored;
    for (const auto& s : reference) ref_scored.push_back(suffix(s));
    report.rows.push_back(score_rows("data", ref_scored, scorer));

    Rng urng = derive_rng(ev.seed, 0x756E6966);
    std::uniform_int_distribution<TokenId> pick(2, V - 1);
    std::vector<TokenSeq> uniform;
    for (int i = 0; i < ev.n_samples; ++i) {
        TokenSeq s(static_cast<size_t>(length - prefix));
        for (auto& id : s) id = pick(urng);
        uniform.push_back(std::move(s));
    }
    report.rows.push_back(score_rows("uniform", uniform, scorer));

    for (double scale : ev.scales) {
        std::vector<TokenSeq> generated;
        SampleRequest req;
        req.length = length;
        req.scale = scale;
        req.steps = cfg.sample.steps;
        req.threads = cfg.sample.threads;
        if (ev.task == EvalTask::unconditional) {
            req.seed = ev.seed;
            req.count = ev.n_samples;
            for (auto& out : sample(req, *in.model)) generated.push_back(std::move(out.tokens));
        } else {
            req.count = 1;
            for (int i = 0; i < ev.n_samples; ++i) {
                req.mask.assign(static_cast<size_t>(length), 0);
                std::fill(req.mask.begin(), req.mask.begin() + prefix, uint8_t{1});
                req.cond_tokens = reference[static_cast<size_t>(i)];
                req.seed = splitmix64(ev.seed + static_cast<uint64_t>(i));
                generated.push_back(suffix(sample(req, *in.model).front().tokens));
            }
        }
        MetricRow row = score_rows(scale_label(scale), generated, scorer);
        row.scale = scale;
        row.has_scale = true;
        report.rows.push_back(std::move(row));
    }
    return report;
}

Json to_json(const EvalReport& r) {
    Json j;
    j["task"] = r.task;
    j["space"] = r.space;
    j["self_conditioning"] = r.self_conditioning;
    j["checkpoint_id"] = r.checkpoint_id;
    j["config_fingerprint"] = r.config_fingerprint;
    j["vocab_size"] = r.vocab_size;
    j["sample_length"] = r.sample_length;
    j["scorer"] = {{"kind", "interpolated add-k n-gram"}, {"order", r.scorer_order}, {"k", r.scorer_k}};
    j["units"] = {{"entropy", "nats"}, {"nll", "nats per token"}};
    Json rows = Json::array();
    for (const auto& row : r.rows) {
        Json x = {{"label", row.label},
                  {"entropy", row.entropy},
                  {"entropy_se", row.entropy_se},
                  {"proxy_nll", row.nll},
                  {"proxy_nll_se", row.nll_se},
                  {"sequences", row.sequences},
                  {"tokens", row.tokens}};
        if (row.has_scale) x["scale"] = row.scale;
        rows.push_back(std::move(x));
    }
    j["rows"] = rows;
    return j;
}

void write_report_table(std::ostream& out, const EvalReport& r) {
    char line[256];
    out << "task: " << r.task << "   scorer: " << r.scorer_order << "-gram add-k (k=" << r.scorer_k
        << ")   checkpoint: " << r.checkpoint_id << "\n";
    out << "proxy NLL values are only comparable within this report.\n\n";
    std::snprintf(line, sizeof line, "%-14s %-10s %-9s %-18s %-18s %s\n", "model", "space", "self-cond",
                  "entropy (nats)", "proxy NLL", "n");
    out << line;
    for (const auto& row : r.rows) {
        const bool model_row = row.has_scale;
        char ent[48];
        char nll[48];
        std::snprintf(ent, sizeof ent, "%.3f +- %.3f", row.entropy, row.entropy_se);
        std::snprintf(nll, sizeof nll, "%.3f +- %.3f", row.nll, row.nll_se);
        std::snprintf(line, sizeof line, "%-14s %-10s %-9s %-18s %-18s %d\n", row.label.c_str(),
                      model_row ? r.space.c_str() : "-", model_row ? (r.self_conditioning ? "yes" : "no") : "-",
                      ent, nll, row.sequences);
        out << line;
    }
}

}  // namespace sed
