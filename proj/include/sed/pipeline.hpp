#pragma once

#include "sed/config.hpp"
#include "sed/corpus.hpp"
#include "sed/embedding.hpp"

#include <span>
#include <string>
#include <vector>

namespace sed {

struct PreparedCorpus {
    Vocab vocab;
    std::vector<std::string> train;
    std::vector<std::string> validation;
};

// Reads the corpus files, splits off validation documents and builds the
// vocabulary from the training documents only.
PreparedCorpus prepare_corpus(const CorpusConfig& config);

// Builds the diffusion space named by `space` for `vocab`. The pretrained kind
// trains skip-gram vectors on the training documents.
EmbeddingMatrix build_space(const SpaceConfig& space, const Vocab& vocab, std::span<const std::string> train_docs);

}  // namespace sed
