#pragma once

#include "sed/common.hpp"
#include "sed/config.hpp"
#include "sed/corpus.hpp"
#include "sed/sampler.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace sed {

// Shannon entropy (nats) of the pooled unigram distribution, pads excluded.
// Throws when no non-pad token remains.
double unigram_entropy(std::span<const TokenSeq> samples);

// Interpolated add-k n-gram model over token ids 1..V-1 (PAD is never scored
// or predicted). Each order backs off to the next lower one:
//   P_c(w | h) = (n(h, w) + k V' P_{c-1}(w | h')) / (n(h) + k V'),
// with P_{-1} uniform over the V' = V - 1 scored ids. Sequence starts are
// padded with a sentinel context symbol.
class NGramScorer {
public:
    NGramScorer(int order, double k, int vocab_size);

    void add(std::span<const TokenId> sequence);
    double prob(std::span<const TokenId> history, TokenId token) const;
    // Negative log probability summed over the non-pad tokens of `sequence`.
    double sequence_nll(std::span<const TokenId> sequence, int64_t* scored_tokens = nullptr) const;

    int order() const { return order_; }
    double k() const { return k_; }
    int vocab_size() const { return vocab_size_; }
    uint64_t fingerprint() const { return fingerprint_; }

private:
    struct Counts {
        int64_t total = 0;
        std::unordered_map<TokenId, int64_t> next;
    };
    std::string key(std::span<const TokenId> context) const;

    int order_;
    double k_;
    int vocab_size_;
    uint64_t fingerprint_;
    std::vector<std::unordered_map<std::string, Counts>> tables_;  // one per context length
};

NGramScorer train_scorer(std::span<const TokenSeq> corpus, int order, double k, int vocab_size);

struct NllEstimate {
    double mean = 0.0;  // nats per token
    double se = 0.0;    // over per-sequence means
    int64_t tokens = 0;
};

// Mean negative log probability per scored token. Throws when nothing is scored.
NllEstimate proxy_nll(std::span<const TokenSeq> samples, const NGramScorer& scorer);

struct MetricRow {
    std::string label;
    double scale = 0.0;
    bool has_scale = false;
    double entropy = 0.0;
    double entropy_se = 0.0;
    double nll = 0.0;
    double nll_se = 0.0;
    int sequences = 0;
    int64_t tokens = 0;
};

struct EvalReport {
    std::string task;
    std::string space;
    bool self_conditioning = true;
    std::string checkpoint_id;
    std::string config_fingerprint;
    int vocab_size = 0;
    int sample_length = 0;
    int scorer_order = 0;
    double scorer_k = 0.0;
    std::vector<MetricRow> rows;  // data reference first, then the uniform baseline, then one row per scale

    const MetricRow& row(const std::string& label) const;
};

// Entropy standard error from 10 contiguous folds of the sequence list.
double entropy_standard_error(std::span<const TokenSeq> samples);

MetricRow score_rows(std::string label, std::span<const TokenSeq> samples, const NGramScorer& scorer);

struct EvalInputs {
    const SampleModel* model = nullptr;
    const Vocab* vocab = nullptr;
    std::span<const std::string> train_docs;
    std::span<const std::string> validation_docs;
    RunConfig config;  // eval, sample length, space and self-conditioning flags
    std::string checkpoint_id;
};

// Generates eval.n_samples sequences per guidance scale, scores them and the
// validation reference with a scorer trained on the training documents.
// For suffix infilling each sample is conditioned on the first prefix_len
// tokens of a validation slice and only the generated suffix is scored (the
// data row scores the true suffixes).
EvalReport eval_report(const EvalInputs& inputs);

// `count` validation slices of `length` tokens (consecutive, wrapping).
std::vector<TokenSeq> reference_slices(std::span<const std::string> docs, const Vocab& vocab, int count, int length);

Json to_json(const EvalReport& report);
void write_report_table(std::ostream& out, const EvalReport& report);

}  // namespace sed
