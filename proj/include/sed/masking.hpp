#pragma once

#include "sed/common.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sed {

// 1 = conditioning position (clamped to the clean embedding), 0 = infill.
using ConditioningMask = std::vector<uint8_t>;

struct SpanDraw {
    ConditioningMask mask;
    int span_count = 1;       // n
    std::vector<int> starts;  // i_1 < ... < i_{n-1}, empty when n = 1
    bool flipped = false;
};

// Draws n ~ U[1, M]. For n = 1 the mask is all zero (unconditional). Otherwise
// n - 1 distinct split points in (0, L) cut the sequence into n spans; even
// spans condition, odd spans infill, and the whole mask is flipped with
// probability 1/2.
SpanDraw sample_spans(int length, int max_spans, Rng& rng);
ConditioningMask sample_mask(int length, int max_spans, Rng& rng);

bool any_conditioning(std::span<const uint8_t> mask);
int count_infill(std::span<const uint8_t> mask);

// Rows of `clean` where mask = 1, rows of `x_t` elsewhere.
template <typename S>
MatT<S> apply_conditioning(const MatT<S>& x_t, const MatT<S>& clean, std::span<const uint8_t> mask) {
    if (x_t.rows() != clean.rows() || x_t.cols() != clean.cols() ||
        static_cast<size_t>(x_t.rows()) != mask.size()) {
        throw Error("apply_conditioning: shape mismatch");
    }
    MatT<S> out = x_t;
    for (size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) out.row(static_cast<Eigen::Index>(i)) = clean.row(static_cast<Eigen::Index>(i));
    }
    return out;
}

// Zeroes the rows where mask = 1 (the null label used by guidance).
template <typename S>
MatT<S> null_conditioning(const MatT<S>& x, std::span<const uint8_t> mask) {
    if (static_cast<size_t>(x.rows()) != mask.size()) throw Error("null_conditioning: shape mismatch");
    MatT<S> out = x;
    for (size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) out.row(static_cast<Eigen::Index>(i)).setZero();
    }
    return out;
}

std::string mask_to_string(std::span<const uint8_t> mask);
ConditioningMask mask_from_string(std::string_view bits);

}  // namespace sed
