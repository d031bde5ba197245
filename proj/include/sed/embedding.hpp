#pragma once

#include "sed/common.hpp"
#include "sed/corpus.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sed {

enum class SpaceKind { random, pretrained, bits };

SpaceKind parse_space_kind(std::string_view name);
std::string_view to_string(SpaceKind kind);

// Fixed diffusion space: one row per token, every row of L2 norm sqrt(D).
// Rows are renormalized on construction, so every construction path
// satisfies the norm invariant.
class EmbeddingMatrix {
public:
    EmbeddingMatrix() = default;
    explicit EmbeddingMatrix(MatD values);

    int vocab_size() const { return static_cast<int>(values_.rows()); }
    int dim() const { return static_cast<int>(values_.cols()); }
    const MatD& values() const { return values_; }

    template <typename S>
    MatT<S> cast() const {
        return values_.cast<S>();
    }

private:
    MatD values_;
};

EmbeddingMatrix init_random(int vocab_size, int dim, uint64_t seed);

// ceil(log2 V), at least 1.
int bits_dim(int vocab_size);

// Row k is the binary expansion of k (most significant bit first) mapped
// {0, 1} -> {-1, +1}.
EmbeddingMatrix bits_embedding(int vocab_size);

struct SkipGramOptions {
    int window = 4;
    int negatives = 5;
    int64_t steps = 200000;  // center-token updates
    double learning_rate = 0.025;
};

// Skip-gram with negative sampling over a token stream. The returned space is
// the sum of input and output vectors, renormalized to sqrt(D).
EmbeddingMatrix train_skipgram(std::span<const TokenId> corpus, int vocab_size, int dim,
                               const SkipGramOptions& options, uint64_t seed);

// x0[i] = E[w_i] + sigma0 * eps_i.
template <typename S>
MatT<S> embed_tokens(std::span<const TokenId> tokens, const MatT<S>& table, double sigma0, Rng& rng) {
    const auto d = table.cols();
    MatT<S> x(static_cast<Eigen::Index>(tokens.size()), d);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (size_t i = 0; i < tokens.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        if (tokens[i] < 0 || tokens[i] >= table.rows()) {
            throw Error("token id " + std::to_string(tokens[i]) + " outside the embedding table");
        }
        x.row(row) = table.row(tokens[i]);
        if (sigma0 > 0.0) {
            for (Eigen::Index k = 0; k < d; ++k) {
                x(row, k) += static_cast<S>(sigma0 * nd(rng));
            }
        }
    }
    return x;
}

// Per-position logits x * R^T.
template <typename S>
MatT<S> logits(const MatT<S>& x, const MatT<S>& readout) {
    if (x.cols() != readout.cols()) throw Error("logits: embedding width mismatch");
    return x * readout.transpose();
}

// Argmax over readout logits; ties go to the lowest token id.
template <typename S>
TokenSeq decode_argmax(const MatT<S>& x, const MatT<S>& readout) {
    const MatT<S> l = logits(x, readout);
    TokenSeq out(static_cast<size_t>(l.rows()));
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < l.cols(); ++k) {
            if (l(i, k) > l(i, best)) best = k;
        }
        out[static_cast<size_t>(i)] = static_cast<TokenId>(best);
    }
    return out;
}

// The K nearest rows (Euclidean) of E to the row of `token`, nearest first,
// ties broken by token id. The token itself is entry 0.
std::vector<TokenId> nearest_neighbors(const MatD& table, TokenId token, int k);

// Nearest embedding row to each point, ties broken by token id.
TokenSeq nearest_tokens(const MatD& points, const MatD& table);

// For each position: the index of the token nearest to x_t[i] within the K
// nearest neighbors of w0[i], or K when it is not among them.
std::vector<int> nn_ranks(const MatD& x_t, std::span<const TokenId> w0, const MatD& table, int k);

// Neighbor lists are reused across many steps of a trajectory.
class NeighborCache {
public:
    NeighborCache(const MatD& table, int k) : table_(&table), k_(k) {}
    const std::vector<TokenId>& neighbors(TokenId token);
    std::vector<int> ranks(const MatD& x_t, std::span<const TokenId> w0);
    int k() const { return k_; }

private:
    const MatD* table_;
    int k_;
    std::vector<std::vector<TokenId>> lists_;
};

// Embedding file: "SEDEMB 1 <V> <D>\n" followed by V*D little-endian float32
// values, row-major.
void save_embedding_file(const std::string& path, const EmbeddingMatrix& embedding);
EmbeddingMatrix load_embedding_file(const std::string& path, int expected_vocab_size);

}  // namespace sed
