#pragma once

#include "sed/config.hpp"
#include "sed/corpus.hpp"
#include "sed/training.hpp"

#include <string>

namespace sed {

inline constexpr int kCheckpointFormat = 1;

struct Checkpoint {
    RunConfig config;
    TrainState state;
    Vocab vocab;
    std::string id;  // content hash of the tensor blob and step
};

// Directory layout: manifest.json (format version, config, step, seed, data
// cursor, tensor table with names, shapes, dtypes and byte offsets),
// tensors.bin (little-endian float32, concatenated) and vocab.txt. The
// directory is written under a temporary name and renamed into place.
// Returns the checkpoint id.
std::string save_checkpoint(const std::string& dir, const RunConfig& config, const TrainState& state,
                            const Vocab& vocab);

Checkpoint load_checkpoint(const std::string& dir);

}  // namespace sed
