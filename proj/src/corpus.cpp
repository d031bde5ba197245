#include "sed/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace sed {

std::string hex64(uint64_t v) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = kDigits[v & 0xF];
        v >>= 4;
    }
    return out;
}

Granularity parse_granularity(std::string_view name) {
    if (name == "char" || name == "character") {
        return Granularity::character;
    }
    if (name == "word") {
        return Granularity::word;
    }
    throw Error("unknown tokenizer granularity '" + std::string(name) + "' (expected char|word)");
}

std::string_view to_string(Granularity g) {
    return g == Granularity::character ? "char" : "word";
}

namespace {

size_t utf8_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;  // invalid lead byte: treat as a single unit
}

}  // namespace

std::vector<std::string> split_units(std::string_view text, Granularity granularity) {
    std::vector<std::string> units;
    if (granularity == Granularity::character) {
        size_t i = 0;
        while (i < text.size()) {
            size_t n = std::min(utf8_length(static_cast<unsigned char>(text[i])), text.size() - i);
            units.emplace_back(text.substr(i, n));
            i += n;
        }
        return units;
    }
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) units.emplace_back(text.substr(start, i - start));
    }
    return units;
}

Vocab::Vocab(std::vector<std::string> units, Granularity granularity) : granularity_(granularity) {
    units_.reserve(units.size() + 2);
    units_.emplace_back(kPadUnit);
    units_.emplace_back(kUnkUnit);
    for (auto& u : units) {
        if (u == kPadUnit || u == kUnkUnit) {
            throw Error("vocabulary unit collides with a reserved symbol: " + u);
        }
        units_.push_back(std::move(u));
    }
    for (size_t i = 0; i < units_.size(); ++i) {
        if (!index_.emplace(units_[i], static_cast<TokenId>(i)).second) {
            throw Error("duplicate vocabulary unit: " + units_[i]);
        }
    }
}

const std::string& Vocab::unit(TokenId id) const {
    if (id < 0 || id >= size()) {
        throw Error("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                    std::to_string(size()));
    }
    return units_[static_cast<size_t>(id)];
}

std::optional<TokenId> Vocab::find(std::string_view unit) const {
    auto it = index_.find(std::string(unit));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

TokenSeq Vocab::encode(std::string_view text) const {
    TokenSeq ids;
    for (const auto& u : split_units(text, granularity_)) {
        auto it = index_.find(u);
        // The reserved strings are never produced by a tokenizer match.
        if (it == index_.end() || it->second == kPad || it->second == kUnk) {
            ids.push_back(kUnk);
        } else {
            ids.push_back(it->second);
        }
    }
    return ids;
}

std::string Vocab::decode(std::span<const TokenId> ids, bool strip_pads) const {
    std::string out;
    bool first = true;
    for (TokenId id : ids) {
        if (strip_pads && id == kPad) continue;
        if (granularity_ == Granularity::word && !first) out.push_back(' ');
        out += unit(id);
        first = false;
    }
    return out;
}

uint64_t Vocab::fingerprint() const {
    uint64_t h = fnv1a64(to_string(granularity_));
    for (const auto& u : units_) {
        h = fnv1a64(u, h);
        h = fnv1a64(std::string_view("\n", 1), h);
    }
    return h;
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write vocabulary file " + path);
    for (const auto& u : units_) {
        out << u << '\n';
    }
    if (!out) throw Error("failed writing vocabulary file " + path);
}

Vocab Vocab::load(const std::string& path, Granularity granularity) {
    auto lines = read_lines(path);
    if (lines.size() < 2 || lines[0] != kPadUnit || lines[1] != kUnkUnit) {
        throw Error("vocabulary file " + path + " must start with " + std::string(kPadUnit) + " and " +
                    std::string(kUnkUnit));
    }
    std::vector<std::string> units(lines.begin() + 2, lines.end());
    return Vocab(std::move(units), granularity);
}

Vocab build_vocab(std::span<const std::string> documents, int max_size, Granularity granularity) {
    if (max_size < 3) {
        throw Error("vocabulary size must be at least 3 (PAD, UNK and one unit)");
    }
    std::map<std::string, int64_t> counts;
    int64_t total = 0;
    int64_t nonempty_docs = 0;
    for (const auto& doc : documents) {
        auto units = split_units(doc, granularity);
        for (auto& u : units) {
            ++counts[u];
            ++total;
        }
        if (!units.empty()) ++nonempty_docs;
    }
    if (granularity == Granularity::character && nonempty_docs > 1) {
        counts[" "] += nonempty_docs - 1;  // document separator used by TokenStream
    }
    counts.erase(std::string(Vocab::kPadUnit));
    counts.erase(std::string(Vocab::kUnkUnit));
    if (total == 0) {
        throw Error("cannot build a vocabulary from an empty corpus");
    }
    std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    size_t keep = std::min(ranked.size(), static_cast<size_t>(max_size - 2));
    std::vector<std::string> units;
    units.reserve(keep);
    for (size_t i = 0; i < keep; ++i) units.push_back(ranked[i].first);
    return Vocab(std::move(units), granularity);
}

Vocab build_vocab(std::string_view text, int max_size, Granularity granularity) {
    std::vector<std::string> docs{std::string(text)};
    return build_vocab(std::span<const std::string>(docs), max_size, granularity);
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

CorpusSplit split_corpus(std::vector<std::string> documents, double validation_fraction) {
    std::erase_if(documents, [](const std::string& d) { return d.empty(); });
    if (documents.empty()) throw Error("corpus contains no documents");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
        throw Error("validation_fraction must lie in [0, 1)");
    }
    size_t held = static_cast<size_t>(validation_fraction * static_cast<double>(documents.size()));
    if (validation_fraction > 0.0 && held == 0 && documents.size() >= 2) held = 1;
    CorpusSplit split;
    split.train.assign(documents.begin(), documents.end() - static_cast<std::ptrdiff_t>(held));
    split.validation.assign(documents.end() - static_cast<std::ptrdiff_t>(held), documents.end());
    return split;
}

TokenStream::TokenStream(std::span<const std::string> documents, const Vocab& vocab) {
    const auto sep = vocab.granularity() == Granularity::character ? vocab.find(" ") : std::nullopt;
    for (const auto& doc : documents) {
        auto ids = vocab.encode(doc);
        if (ids.empty()) continue;
        if (!tokens_.empty() && sep) tokens_.push_back(*sep);
        tokens_.insert(tokens_.end(), ids.begin(), ids.end());
    }
    if (tokens_.empty()) throw Error("token stream is empty");
}

TokenStream::TokenStream(TokenSeq tokens) : tokens_(std::move(tokens)) {
    if (tokens_.empty()) throw Error("token stream is empty");
}

TokenId TokenStream::next() {
    if (cursor_ >= tokens_.size()) cursor_ = 0;
    return tokens_[cursor_++];
}

void TokenStream::seek(size_t cursor) {
    if (cursor > tokens_.size()) throw Error("stream cursor out of range");
    cursor_ = cursor;
}

TokenSeq make_training_sequence(TokenStream& stream, int length, double pad_rate, Rng& rng) {
    if (!(pad_rate >= 0.0 && pad_rate < 1.0)) throw Error("pad_rate must lie in [0, 1)");
    if (length <= 0) throw Error("training sequence length must be positive");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    TokenSeq seq(static_cast<size_t>(length));
    for (auto& id : seq) {
        id = (pad_rate > 0.0 && u(rng) < pad_rate) ? Vocab::kPad : stream.next();
    }
    return seq;
}

namespace {

struct Lexicon {
    std::vector<std::string_view> det{"the", "a", "every", "one", "my", "this"};
    std::vector<std::string_view> adj{"small", "quick", "brown", "old", "quiet", "red", "happy", "lazy"};
    std::vector<std::string_view> noun{"cat", "dog", "fox", "bird", "child", "farmer", "river", "garden",
                                       "house", "boat", "teacher", "horse"};
    std::vector<std::string_view> verb_t{"sees", "finds", "likes", "follows", "watches", "carries", "helps"};
    std::vector<std::string_view> verb_i{"sleeps", "runs", "sings", "waits", "jumps", "smiles"};
    std::vector<std::string_view> prep{"near", "over", "under", "behind", "beside", "into"};
    std::vector<std::string_view> adv{"slowly", "today", "again", "happily", "often"};
};

}  // namespace

std::vector<std::string> generate_grammar_corpus(int lines, uint64_t seed) {
    static const Lexicon lex;
    Rng rng = derive_rng(seed, 0x6772616D);
    auto pick = [&](const std::vector<std::string_view>& v) {
        return std::string(v[std::uniform_int_distribution<size_t>(0, v.size() - 1)(rng)]);
    };
    std::bernoulli_distribution coin(0.5);
    std::bernoulli_distribution rare(0.25);
    auto noun_phrase = [&]() {
        std::string np = pick(lex.det) + " ";
        if (coin(rng)) np += pick(lex.adj) + " ";
        return np + pick(lex.noun);
    };
    auto sentence = [&]() {
        std::string s = noun_phrase();
        if (coin(rng)) {
            s += " " + pick(lex.verb_t) + " " + noun_phrase();
        } else {
            s += " " + pick(lex.verb_i);
        }
        if (rare(rng)) s += " " + pick(lex.prep) + " " + noun_phrase();
        if (rare(rng)) s += " " + pick(lex.adv);
        return s + ".";
    };
    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(lines));
    for (int i = 0; i < lines; ++i) {
        std::string line = sentence();
        if (coin(rng)) line += " " + sentence();
        out.push_back(std::move(line));
    }
    return out;
}

}  // namespace sed
