#include "sed/embedding.hpp"

#include "sed/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace sed {

SpaceKind parse_space_kind(std::string_view name) {
    if (name == "random") return SpaceKind::random;
    if (name == "pretrained") return SpaceKind::pretrained;
    if (name == "bits") return SpaceKind::bits;
    throw Error("unknown diffusion space '" + std::string(name) + "' (expected random|pretrained|bits)");
}

std::string_view to_string(SpaceKind kind) {
    switch (kind) {
        case SpaceKind::random: return "random";
        case SpaceKind::pretrained: return "pretrained";
        case SpaceKind::bits: return "bits";
    }
    return "random";
}

EmbeddingMatrix::EmbeddingMatrix(MatD values) : values_(std::move(values)) {
    if (values_.rows() < 2 || values_.cols() < 1) {
        throw Error("embedding matrix needs V >= 2 rows and D >= 1 columns");
    }
    const double target = std::sqrt(static_cast<double>(values_.cols()));
    for (Eigen::Index k = 0; k < values_.rows(); ++k) {
        const double n = values_.row(k).norm();
        if (!(n > 0.0) || !std::isfinite(n)) {
            throw Error("embedding row " + std::to_string(k) + " has zero or non-finite norm");
        }
        // Rows already at the target norm are left alone so that wrapping a
        // normalized table again is an exact no-op.
        if (std::abs(n - target) > 1e-13 * target) values_.row(k) *= target / n;
    }
}

EmbeddingMatrix init_random(int vocab_size, int dim, uint64_t seed) {
    if (vocab_size < 2 || dim < 1) throw Error("init_random needs V >= 2 and D >= 1");
    Rng rng = derive_rng(seed, 0x656D62);
    MatD m(vocab_size, dim);
    fill_normal(m, rng);
    return EmbeddingMatrix(std::move(m));
}

int bits_dim(int vocab_size) {
    if (vocab_size < 2) throw Error("bits embedding needs V >= 2");
    int d = 0;
    while ((int64_t{1} << d) < vocab_size) ++d;
    return std::max(d, 1);
}

EmbeddingMatrix bits_embedding(int vocab_size) {
    const int d = bits_dim(vocab_size);
    MatD m(vocab_size, d);
    for (int k = 0; k < vocab_size; ++k) {
        for (int b = 0; b < d; ++b) {
            const int bit = (k >> (d - 1 - b)) & 1;
            m(k, b) = bit ? 1.0 : -1.0;
        }
    }
    return EmbeddingMatrix(std::move(m));
}

EmbeddingMatrix train_skipgram(std::span<const TokenId> corpus, int vocab_size, int dim,
                               const SkipGramOptions& options, uint64_t seed) {
    if (options.window < 1 || options.negatives < 0) throw Error("skip-gram: invalid window/negatives");
    if (corpus.size() <= static_cast<size_t>(options.window)) {
        throw Error("skip-gram: corpus shorter than the context window");
    }
    if (vocab_size < 2 || dim < 1) throw Error("skip-gram needs V >= 2 and D >= 1");

    Rng rng = derive_rng(seed, 0x736B6970);
    MatD in(vocab_size, dim);
    MatD out = MatD::Zero(vocab_size, dim);
    std::uniform_real_distribution<double> init(-0.5 / dim, 0.5 / dim);
    for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = init(rng);

    std::vector<double> freq(static_cast<size_t>(vocab_size), 0.0);
    for (TokenId id : corpus) {
        if (id < 0 || id >= vocab_size) throw Error("skip-gram: token id outside vocabulary");
        freq[static_cast<size_t>(id)] += 1.0;
    }
    for (auto& f : freq) f = f > 0.0 ? std::pow(f, 0.75) : 0.0;
    std::discrete_distribution<int> negative(freq.begin(), freq.end());
    std::uniform_int_distribution<size_t> center_pos(0, corpus.size() - 1);
    std::uniform_int_distribution<int> shrink(1, options.window);

    auto sigmoid = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
    Eigen::RowVectorXd grad_in(dim);
    const int64_t steps = options.steps;
    for (int64_t step = 0; step < steps; ++step) {
        const double lr = std::max(options.learning_rate * (1.0 - static_cast<double>(step) / static_cast<double>(steps)),
                                   options.learning_rate * 1e-4);
        const size_t c = center_pos(rng);
        const int b = shrink(rng);
        const TokenId center = corpus[c];
        for (int off = -b; off <= b; ++off) {
            if (off == 0) continue;
            const auto pos = static_cast<std::ptrdiff_t>(c) + off;
            if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(corpus.size())) continue;
            const TokenId context = corpus[static_cast<size_t>(pos)];
            grad_in.setZero();
            for (int n = 0; n <= options.negatives; ++n) {
                TokenId target = context;
                double label = 1.0;
                if (n > 0) {
                    target = negative(rng);
                    if (target == context) continue;
                    label = 0.0;
                }
                const double score = in.row(center).dot(out.row(target));
                const double g = lr * (label - sigmoid(score));
                grad_in += g * out.row(target);
                out.row(target) += g * in.row(center);
            }
            in.row(center) += grad_in;
        }
    }
    MatD combined = in + out;
    // Tokens absent from the corpus keep their random input vector.
    return EmbeddingMatrix(std::move(combined));
}

std::vector<TokenId> nearest_neighbors(const MatD& table, TokenId token, int k) {
    const auto v = static_cast<int>(table.rows());
    if (k < 1 || k > v) throw Error("neighbor count K must lie in [1, V]");
    if (token < 0 || token >= v) throw Error("nearest_neighbors: token outside vocabulary");
    std::vector<double> dist(static_cast<size_t>(v));
    for (int j = 0; j < v; ++j) {
        dist[static_cast<size_t>(j)] = (table.row(j) - table.row(token)).squaredNorm();
    }
    std::vector<TokenId> order(static_cast<size_t>(v));
    std::iota(order.begin(), order.end(), 0);
    auto cmp = [&](TokenId a, TokenId b) {
        const double da = dist[static_cast<size_t>(a)];
        const double db = dist[static_cast<size_t>(b)];
        if (a == token) return b != token;
        if (b == token) return false;
        return da < db || (da == db && a < b);
    };
    std::partial_sort(order.begin(), order.begin() + k, order.end(), cmp);
    order.resize(static_cast<size_t>(k));
    return order;
}

TokenSeq nearest_tokens(const MatD& points, const MatD& table) {
    const VecD norms = table.rowwise().squaredNorm();
    const MatD dots = points * table.transpose();
    TokenSeq out(static_cast<size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        // ||x - e||^2 = ||x||^2 - 2 x.e + ||e||^2; the first term is shared.
        Eigen::Index best = 0;
        double best_d = norms(0) - 2.0 * dots(i, 0);
        for (Eigen::Index k = 1; k < table.rows(); ++k) {
            const double d = norms(k) - 2.0 * dots(i, k);
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        out[static_cast<size_t>(i)] = static_cast<TokenId>(best);
    }
    return out;
}

const std::vector<TokenId>& NeighborCache::neighbors(TokenId token) {
    if (lists_.empty()) lists_.resize(static_cast<size_t>(table_->rows()));
    auto& slot = lists_.at(static_cast<size_t>(token));
    if (slot.empty()) slot = nearest_neighbors(*table_, token, k_);
    return slot;
}

std::vector<int> NeighborCache::ranks(const MatD& x_t, std::span<const TokenId> w0) {
    if (static_cast<size_t>(x_t.rows()) != w0.size()) throw Error("nn_ranks: length mismatch");
    const TokenSeq nearest = nearest_tokens(x_t, *table_);
    std::vector<int> out(w0.size(), k_);
    for (size_t i = 0; i < w0.size(); ++i) {
        const auto& list = neighbors(w0[i]);
        auto it = std::find(list.begin(), list.end(), nearest[i]);
        if (it != list.end()) out[i] = static_cast<int>(it - list.begin());
    }
    return out;
}

std::vector<int> nn_ranks(const MatD& x_t, std::span<const TokenId> w0, const MatD& table, int k) {
    NeighborCache cache(table, k);
    return cache.ranks(x_t, w0);
}

void save_embedding_file(const std::string& path, const EmbeddingMatrix& embedding) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write embedding file " + path);
    out << "SEDEMB 1 " << embedding.vocab_size() << ' ' << embedding.dim() << '\n';
    const MatF values = embedding.cast<float>();
    write_f32_le(out, std::span<const float>(values.data(), static_cast<size_t>(values.size())));
    if (!out) throw Error("failed writing embedding file " + path);
}

EmbeddingMatrix load_embedding_file(const std::string& path, int expected_vocab_size) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open embedding file " + path);
    std::string header;
    std::getline(in, header);
    std::istringstream hs(header);
    std::string magic;
    int version = 0;
    int64_t v = 0;
    int64_t d = 0;
    hs >> magic >> version >> v >> d;
    if (magic != "SEDEMB" || version != 1 || v < 2 || d < 1) {
        throw Error("malformed embedding file header in " + path);
    }
    if (expected_vocab_size > 0 && v != expected_vocab_size) {
        throw Error("embedding file " + path + " has V=" + std::to_string(v) + " but the vocabulary has " +
                    std::to_string(expected_vocab_size) + " entries");
    }
    MatF values(v, d);
    read_f32_le(in, std::span<float>(values.data(), static_cast<size_t>(values.size())));
    if (!in) throw Error("embedding file " + path + " is truncated");
    return EmbeddingMatrix(values.cast<double>());
}

}  // namespace sed
