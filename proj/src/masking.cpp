#include "sed/masking.hpp"

#include <algorithm>
#include <numeric>

namespace sed {

SpanDraw sample_spans(int length, int max_spans, Rng& rng) {
    if (length < 1) throw Error("mask length must be positive");
    if (max_spans < 1 || max_spans > length) {
        throw Error("max span count must lie in [1, L] (got M=" + std::to_string(max_spans) +
                    ", L=" + std::to_string(length) + ")");
    }
    SpanDraw draw;
    draw.mask.assign(static_cast<size_t>(length), 0);
    draw.span_count = std::uniform_int_distribution<int>(1, max_spans)(rng);
    if (draw.span_count == 1) return draw;

    // Partial Fisher-Yates over {1, ..., L-1}: uniform without replacement.
    const int picks = draw.span_count - 1;
    std::vector<int> pool(static_cast<size_t>(length - 1));
    std::iota(pool.begin(), pool.end(), 1);
    for (int k = 0; k < picks; ++k) {
        const int j = std::uniform_int_distribution<int>(k, length - 2)(rng);
        std::swap(pool[static_cast<size_t>(k)], pool[static_cast<size_t>(j)]);
    }
    draw.starts.assign(pool.begin(), pool.begin() + picks);
    std::sort(draw.starts.begin(), draw.starts.end());

    draw.flipped = std::bernoulli_distribution(0.5)(rng);
    int span = 0;
    size_t next = 0;
    for (int i = 0; i < length; ++i) {
        while (next < draw.starts.size() && draw.starts[next] == i) {
            ++span;
            ++next;
        }
        const bool conditioning = (span % 2 == 0) != draw.flipped;
        draw.mask[static_cast<size_t>(i)] = conditioning ? 1 : 0;
    }
    return draw;
}

ConditioningMask sample_mask(int length, int max_spans, Rng& rng) {
    return sample_spans(length, max_spans, rng).mask;
}

bool any_conditioning(std::span<const uint8_t> mask) {
    return std::any_of(mask.begin(), mask.end(), [](uint8_t b) { return b != 0; });
}

int count_infill(std::span<const uint8_t> mask) {
    return static_cast<int>(std::count(mask.begin(), mask.end(), uint8_t{0}));
}

std::string mask_to_string(std::span<const uint8_t> mask) {
    std::string s(mask.size(), '0');
    for (size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) s[i] = '1';
    }
    return s;
}

ConditioningMask mask_from_string(std::string_view bits) {
    ConditioningMask m(bits.size());
    for (size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] != '0' && bits[i] != '1') throw Error("mask strings contain only 0 and 1");
        m[i] = bits[i] == '1' ? 1 : 0;
    }
    return m;
}

}  // namespace sed
