#include "doctest.h"

#include "sed/corpus.hpp"

#include <filesystem>
#include <fstream>

using namespace sed;

TEST_CASE("build_vocab orders by frequency then unit string") {
    const Vocab v = build_vocab(std::string_view("aab"), 4, Granularity::character);
    REQUIRE(v.size() == 4);
    CHECK(v.unit(0) == "<pad>");
    CHECK(v.unit(1) == "<unk>");
    CHECK(v.unit(2) == "a");
    CHECK(v.unit(3) == "b");

    // Ties: "c" and "b" both twice, lexicographic order decides.
    const Vocab t = build_vocab(std::string_view("ccbba"), 4, Granularity::character);
    CHECK(t.unit(2) == "b");
    CHECK(t.unit(3) == "c");
}

TEST_CASE("build_vocab degenerate and repeated inputs") {
    const Vocab v = build_vocab(std::string_view("zzzz"), 100, Granularity::character);
    CHECK(v.size() == 3);
    CHECK(v.unit(2) == "z");

    const std::vector<std::string> docs{"the cat sat", "the dog sat", "a cat"};
    const Vocab a = build_vocab(docs, 50, Granularity::word);
    const Vocab b = build_vocab(docs, 50, Granularity::word);
    CHECK(a.fingerprint() == b.fingerprint());
    REQUIRE(a.size() == b.size());
    for (int i = 0; i < a.size(); ++i) CHECK(a.unit(i) == b.unit(i));
    CHECK(a.unit(2) == "cat");  // cat, sat, the all twice: alphabetical
    CHECK(a.unit(3) == "sat");
    CHECK(a.unit(4) == "the");

    CHECK_THROWS_AS(build_vocab(std::string_view(""), 10, Granularity::character), Error);
    CHECK_THROWS_AS(build_vocab(std::vector<std::string>{}, 10, Granularity::word), Error);
}

TEST_CASE("encode and decode") {
    const Vocab v = build_vocab(std::string_view("hello world"), 64, Granularity::character);
    CHECK(v.encode("").empty());
    CHECK(v.decode(TokenSeq{}) == "");
    CHECK(v.encode("hex") == TokenSeq{*v.find("h"), *v.find("e"), Vocab::kUnk});

    const TokenSeq padded{Vocab::kPad, *v.find("l"), Vocab::kPad, *v.find("o")};
    CHECK(v.decode(padded, true) == "lo");

    // Roundtrip over random in-vocabulary strings.
    std::vector<std::string> units;
    for (int i = 2; i < v.size(); ++i) units.push_back(v.unit(i));
    Rng rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        std::string s;
        const int n = static_cast<int>(rng() % 40);
        for (int i = 0; i < n; ++i) s += units[rng() % units.size()];
        REQUIRE(v.decode(v.encode(s)) == s);
    }
}

TEST_CASE("word mode and UTF-8 units") {
    const Vocab w = build_vocab(std::vector<std::string>{"red fox runs", "red dog"}, 10, Granularity::word);
    CHECK(w.decode(w.encode("red dog runs")) == "red dog runs");
    CHECK(w.encode("blue")[0] == Vocab::kUnk);

    const auto units = split_units("añb€", Granularity::character);
    REQUIRE(units.size() == 4);
    CHECK(units[1] == "ñ");
    CHECK(units[3] == "€");
}

TEST_CASE("vocab file roundtrip") {
    const auto path = std::filesystem::temp_directory_path() / "sed_test_vocab.txt";
    const Vocab v = build_vocab(std::string_view("a b, c"), 20, Granularity::character);
    v.save(path.string());
    const Vocab back = Vocab::load(path.string(), Granularity::character);
    CHECK(back.fingerprint() == v.fingerprint());
    CHECK(back.find(" ").has_value());
    std::filesystem::remove(path);
}

TEST_CASE("make_training_sequence") {
    TokenStream stream(TokenSeq{2, 3, 4, 5, 6});
    Rng rng(1);
    CHECK(make_training_sequence(stream, 7, 0.0, rng) == TokenSeq{2, 3, 4, 5, 6, 2, 3});  // wraps

    SUBCASE("pad rate converges") {
        TokenStream s(TokenSeq{2, 3, 4});
        Rng r(11);
        int64_t pads = 0;
        const int64_t total = 1000000;
        for (int64_t i = 0; i < total / 100; ++i) {
            for (TokenId id : make_training_sequence(s, 100, 0.10, r)) pads += id == Vocab::kPad;
        }
        CHECK(std::abs(static_cast<double>(pads) / total - 0.10) < 0.003);
    }

    SUBCASE("pad positions are uniform") {
        const int L = 64;
        TokenStream s(TokenSeq{2, 3, 4});
        Rng r(12);
        std::vector<int64_t> counts(L, 0);
        int64_t total = 0;
        for (int i = 0; i < 20000; ++i) {
            const auto seq = make_training_sequence(s, L, 0.10, r);
            for (int j = 0; j < L; ++j) {
                if (seq[static_cast<size_t>(j)] == Vocab::kPad) {
                    ++counts[static_cast<size_t>(j)];
                    ++total;
                }
            }
        }
        double chi2 = 0.0;
        const double expected = static_cast<double>(total) / L;
        for (auto c : counts) chi2 += (c - expected) * (c - expected) / expected;
        CHECK(chi2 < 92.01);  // 99th percentile of chi-square with 63 dof
    }

    SUBCASE("non-pad positions read the stream in order") {
        TokenStream s(TokenSeq{2, 3, 4, 5});
        Rng r(3);
        const auto seq = make_training_sequence(s, 40, 0.3, r);
        TokenId expect = 2;
        for (TokenId id : seq) {
            if (id == Vocab::kPad) continue;
            CHECK(id == expect);
            expect = expect == 5 ? 2 : expect + 1;
        }
    }
}

TEST_CASE("token stream joins documents with a space unit") {
    const std::vector<std::string> docs{"ab", "ba"};
    const Vocab v = build_vocab(docs, 10, Granularity::character);
    const TokenStream s(docs, v);
    CHECK(v.decode(s.tokens()) == "ab ba");
}

TEST_CASE("split_corpus holds out the tail") {
    std::vector<std::string> docs;
    for (int i = 0; i < 20; ++i) docs.push_back("d" + std::to_string(i));
    docs.insert(docs.begin() + 3, "");
    const auto split = split_corpus(docs, 0.1);
    CHECK(split.train.size() == 18);
    CHECK(split.validation == std::vector<std::string>{"d18", "d19"});
}

TEST_CASE("grammar corpus is deterministic") {
    const auto a = generate_grammar_corpus(50, 3);
    const auto b = generate_grammar_corpus(50, 3);
    const auto c = generate_grammar_corpus(50, 4);
    CHECK(a == b);
    CHECK(a != c);
    for (const auto& line : a) CHECK(line.back() == '.');
}
