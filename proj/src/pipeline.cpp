#include "sed/pipeline.hpp"

namespace sed {

PreparedCorpus prepare_corpus(const CorpusConfig& config) {
    if (config.train_path.empty()) throw Error("corpus.train_path is not set");
    PreparedCorpus out;
    auto docs = read_lines(config.train_path);
    if (config.validation_path.empty()) {
        auto split = split_corpus(std::move(docs), config.validation_fraction);
        out.train = std::move(split.train);
        out.validation = std::move(split.validation);
    } else {
        out.train = split_corpus(std::move(docs), 0.0).train;
        out.validation = split_corpus(read_lines(config.validation_path), 0.0).train;
    }
    if (out.train.empty()) throw Error("corpus " + config.train_path + " has no training documents");
    out.vocab = build_vocab(out.train, config.vocab_size, config.granularity);
    return out;
}

EmbeddingMatrix build_space(const SpaceConfig& space, const Vocab& vocab, std::span<const std::string> train_docs) {
    switch (space.kind) {
        case SpaceKind::random:
            return init_random(vocab.size(), space.dim, space.seed);
        case SpaceKind::bits:
            return bits_embedding(vocab.size());
        case SpaceKind::pretrained: {
            const TokenStream stream(train_docs, vocab);
            return train_skipgram(stream.tokens(), vocab.size(), space.dim, space.skipgram, space.seed);
        }
    }
    throw Error("unknown space kind");
}

}  // namespace sed
