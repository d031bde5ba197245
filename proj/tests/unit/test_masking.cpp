#include "doctest.h"

#include "sed/masking.hpp"

#include <cmath>

using namespace sed;

namespace {

// P(min of m distinct draws from {1..N} <= x).
double min_cdf(int x, int n_pool, int m) {
    if (x < 1) return 0.0;
    if (x >= n_pool) return 1.0;
    // P(min > x) = C(N - x, m) / C(N, m), as a running product.
    double above = 1.0;
    for (int i = 0; i < m; ++i) above *= static_cast<double>(n_pool - x - i) / (n_pool - i);
    return 1.0 - std::max(above, 0.0);
}

}  // namespace

TEST_CASE("M = 1 is always unconditional") {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const auto d = sample_spans(32, 1, rng);
        REQUIRE(d.span_count == 1);
        REQUIRE_FALSE(any_conditioning(d.mask));
    }
    CHECK_THROWS_AS(sample_mask(4, 5, rng), Error);
}

TEST_CASE("span structure") {
    Rng rng(2);
    for (int i = 0; i < 2000; ++i) {
        const auto d = sample_spans(40, 5, rng);
        REQUIRE(d.mask.size() == 40);
        REQUIRE(static_cast<int>(d.starts.size()) == d.span_count - 1);
        if (d.span_count == 1) {
            REQUIRE(count_infill(d.mask) == 40);
            continue;
        }
        // The mask changes value exactly at the split points.
        for (int j = 1; j < 40; ++j) {
            const bool split = std::find(d.starts.begin(), d.starts.end(), j) != d.starts.end();
            REQUIRE((d.mask[static_cast<size_t>(j)] != d.mask[static_cast<size_t>(j - 1)]) == split);
        }
        REQUIRE(d.mask[0] == (d.flipped ? 0 : 1));
    }
}

TEST_CASE("split points follow uniform order statistics") {
    const int L = 64;
    const int M = 5;
    const int draws = 100000;
    Rng rng(3);
    std::vector<std::vector<double>> sums(M + 1, std::vector<double>(M + 1, 0.0));
    std::vector<std::vector<double>> sq(M + 1, std::vector<double>(M + 1, 0.0));
    std::vector<int> count(M + 1, 0);
    std::vector<std::vector<int>> firsts(M + 1);
    int64_t cond = 0;
    int64_t cond_total = 0;
    int flips = 0;
    int multi = 0;
    for (int i = 0; i < draws; ++i) {
        const auto d = sample_spans(L, M, rng);
        const int n = d.span_count;
        ++count[static_cast<size_t>(n)];
        if (n == 1) continue;
        ++multi;
        flips += d.flipped ? 1 : 0;
        for (int k = 1; k < n; ++k) {
            const double v = d.starts[static_cast<size_t>(k - 1)];
            sums[static_cast<size_t>(n)][static_cast<size_t>(k)] += v;
            sq[static_cast<size_t>(n)][static_cast<size_t>(k)] += v * v;
        }
        firsts[static_cast<size_t>(n)].push_back(d.starts[0]);
        cond += d.mask[17];
        ++cond_total;
    }
    for (int n = 2; n <= M; ++n) {
        const double c = count[static_cast<size_t>(n)];
        for (int k = 1; k < n; ++k) {
            const double mean = sums[static_cast<size_t>(n)][static_cast<size_t>(k)] / c;
            const double var = sq[static_cast<size_t>(n)][static_cast<size_t>(k)] / c - mean * mean;
            CAPTURE(n);
            CAPTURE(k);
            CHECK(std::abs(mean - static_cast<double>(k) * L / n) < 3 * std::sqrt(var / c));
        }
        // Kolmogorov-Smirnov on the first split point, critical value at p = 0.01.
        const auto& f = firsts[static_cast<size_t>(n)];
        std::vector<int> hist(L, 0);
        for (int v : f) ++hist[static_cast<size_t>(v)];
        double cum = 0.0;
        double dmax = 0.0;
        for (int x = 1; x < L; ++x) {
            cum += hist[static_cast<size_t>(x)];
            dmax = std::max(dmax, std::abs(cum / static_cast<double>(f.size()) - min_cdf(x, L - 1, n - 1)));
        }
        CHECK(dmax < 1.6276236115189502 / std::sqrt(static_cast<double>(f.size())));
    }
    const double se = 0.5 / std::sqrt(static_cast<double>(multi));
    CHECK(std::abs(static_cast<double>(flips) / multi - 0.5) < 3 * se);
    CHECK(std::abs(static_cast<double>(cond) / static_cast<double>(cond_total) - 0.5) <
          3 * 0.5 / std::sqrt(static_cast<double>(cond_total)));
    // n is uniform on 1..M.
    for (int n = 1; n <= M; ++n) {
        const double p = 1.0 / M;
        CHECK(std::abs(count[static_cast<size_t>(n)] / static_cast<double>(draws) - p) <
              4 * std::sqrt(p * (1 - p) / draws));
    }
}

TEST_CASE("apply_conditioning and null_conditioning") {
    Rng rng(4);
    MatD xt(6, 3);
    MatD clean(6, 3);
    fill_normal(xt, rng);
    fill_normal(clean, rng);
    const ConditioningMask none(6, 0);
    const ConditioningMask all(6, 1);
    const ConditioningMask mixed = mask_from_string("101100");

    CHECK(apply_conditioning<double>(xt, clean, none) == xt);
    CHECK(apply_conditioning<double>(xt, clean, all) == clean);
    CHECK(null_conditioning<double>(xt, none) == xt);
    CHECK(null_conditioning<double>(xt, all) == MatD::Zero(6, 3));

    const MatD out = apply_conditioning<double>(xt, clean, mixed);
    const MatD nulled = null_conditioning<double>(out, mixed);
    for (int i = 0; i < 6; ++i) {
        for (int k = 0; k < 3; ++k) {
            const bool c = mixed[static_cast<size_t>(i)] != 0;
            CHECK(out(i, k) == (c ? clean(i, k) : xt(i, k)));
            CHECK(nulled(i, k) == (c ? 0.0 : xt(i, k)));
        }
    }
    CHECK(apply_conditioning<double>(out, clean, mixed) == out);
    CHECK_THROWS_AS(apply_conditioning<double>(xt, clean, ConditioningMask(5, 0)), Error);
}

TEST_CASE("mask strings") {
    const auto m = mask_from_string("0110");
    CHECK(mask_to_string(m) == "0110");
    CHECK(count_infill(m) == 2);
    CHECK_THROWS_AS(mask_from_string("012"), Error);
}
