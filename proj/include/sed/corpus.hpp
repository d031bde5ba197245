#pragma once

#include "sed/common.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sed {

using TokenSeq = std::vector<TokenId>;

enum class Granularity { character, word };

Granularity parse_granularity(std::string_view name);
std::string_view to_string(Granularity g);

// Dense id <-> unit tables. Ids 0 and 1 are always PAD and UNK.
class Vocab {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kUnk = 1;
    static constexpr std::string_view kPadUnit = "<pad>";
    static constexpr std::string_view kUnkUnit = "<unk>";

    Vocab() = default;
    // `units` excludes the two reserved entries.
    Vocab(std::vector<std::string> units, Granularity granularity);

    int size() const { return static_cast<int>(units_.size()); }
    TokenId pad_id() const { return kPad; }
    TokenId unk_id() const { return kUnk; }
    Granularity granularity() const { return granularity_; }
    const std::string& unit(TokenId id) const;
    std::optional<TokenId> find(std::string_view unit) const;
    bool is_special(TokenId id) const { return id == kPad || id == kUnk; }

    TokenSeq encode(std::string_view text) const;
    std::string decode(std::span<const TokenId> ids, bool strip_pads = true) const;

    // Content hash over granularity and the unit table.
    uint64_t fingerprint() const;

    void save(const std::string& path) const;
    static Vocab load(const std::string& path, Granularity granularity);

private:
    std::vector<std::string> units_;
    std::unordered_map<std::string, TokenId> index_;
    Granularity granularity_ = Granularity::character;
};

// Splits text into units: UTF-8 code points or whitespace-separated words.
std::vector<std::string> split_units(std::string_view text, Granularity granularity);

// The most frequent units, ties broken by unit string. `max_size` is the total
// vocabulary size including PAD and UNK. Throws on empty input.
Vocab build_vocab(std::span<const std::string> documents, int max_size, Granularity granularity);
Vocab build_vocab(std::string_view text, int max_size, Granularity granularity);

std::vector<std::string> read_lines(const std::string& path);

struct CorpusSplit {
    std::vector<std::string> train;
    std::vector<std::string> validation;
};

// Last `validation_fraction` of the documents (at least one when there are two
// or more documents) is held out.
CorpusSplit split_corpus(std::vector<std::string> documents, double validation_fraction);

// Concatenated token stream over a document set. Documents are separated by a
// single space unit in character mode. Reading past the end wraps.
class TokenStream {
public:
    TokenStream() = default;
    TokenStream(std::span<const std::string> documents, const Vocab& vocab);
    explicit TokenStream(TokenSeq tokens);

    TokenId next();
    size_t cursor() const { return cursor_; }
    void seek(size_t cursor);
    size_t size() const { return tokens_.size(); }
    const TokenSeq& tokens() const { return tokens_; }

private:
    TokenSeq tokens_;
    size_t cursor_ = 0;
};

// Exactly `length` tokens; each position is independently PAD with
// probability `pad_rate`, otherwise the next stream token.
TokenSeq make_training_sequence(TokenStream& stream, int length, double pad_rate, Rng& rng);

// Small probabilistic grammar over a fixed lexicon. Used for desk-scale runs
// where the structure of the data is known in advance.
std::vector<std::string> generate_grammar_corpus(int lines, uint64_t seed);

}  // namespace sed
