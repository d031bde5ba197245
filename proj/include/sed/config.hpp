#pragma once

#include "sed/corpus.hpp"
#include "sed/denoiser.hpp"
#include "sed/embedding.hpp"
#include "sed/schedule.hpp"
#include "sed/training.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace sed {

using Json = nlohmann::ordered_json;

inline constexpr int kConfigVersion = 1;

struct CorpusConfig {
    std::string train_path;       // one document per line
    std::string validation_path;  // empty: hold out the tail of train_path
    Granularity granularity = Granularity::character;
    int vocab_size = 128;  // including PAD and UNK
    double validation_fraction = 0.1;
};

struct SpaceConfig {
    SpaceKind kind = SpaceKind::random;
    int dim = 32;  // ignored for bits
    uint64_t seed = 0;
    SkipGramOptions skipgram;
};

struct ScheduleConfig {
    int T = 1000;
    double offset = 0.008;
    double sigma0 = 1e-2;
    double max_beta = 0.999;

    NoiseSchedule build() const { return cosine_schedule(T, offset, sigma0, max_beta); }
};

struct SampleConfig {
    double scale = 1.0;
    int steps = 0;  // 0: the full schedule
    int length = 64;
    int count = 1;
    uint64_t seed = 0;
    int threads = 1;
};

enum class EvalTask { unconditional, suffix_infill };

struct EvalConfig {
    EvalTask task = EvalTask::unconditional;
    int n_samples = 32;
    std::vector<double> scales{1.0};
    int prefix_len = 16;  // conditioning prefix for suffix infilling
    int scorer_order = 3;
    double scorer_k = 0.01;
    uint64_t seed = 0;
};

EvalTask parse_eval_task(std::string_view name);
std::string_view to_string(EvalTask task);

struct RunConfig {
    int config_version = kConfigVersion;
    CorpusConfig corpus;
    SpaceConfig space;
    ScheduleConfig schedule;
    DenoiserConfig denoiser;
    TrainConfig train;
    SampleConfig sample;
    EvalConfig eval;

    // Cross-section checks (d_embed vs space, lengths vs max_len, ...).
    void validate() const;
};

Json to_json(const RunConfig& config);
// Missing keys keep their defaults; unknown keys and wrong types are errors.
RunConfig run_config_from_json(const Json& doc);

// Relative corpus paths resolve against the config file's directory.
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& config);

// Embedding width implied by the space kind.
int effective_dim(const SpaceConfig& space, int vocab_size);

}  // namespace sed
