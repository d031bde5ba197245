#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sed {

template <typename S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecT = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using RowVecT = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using MatD = MatT<double>;
using MatF = MatT<float>;
using VecD = VecT<double>;

using Rng = std::mt19937_64;
using TokenId = int32_t;

// Errors raised by the library. Callers (the CLI) map them to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Independent generator for stream (a, b) of a run seeded with `seed`.
// Streams are reproducible from their coordinates alone, so work can be
// split across workers or resumed without carrying generator state.
inline Rng derive_rng(uint64_t seed, uint64_t a, uint64_t b = 0) {
    uint64_t h = splitmix64(seed ^ 0x5EDD1FF5ull);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ (b + 0x632BE59BD9B4E019ull));
    std::seed_seq seq{static_cast<uint32_t>(h), static_cast<uint32_t>(h >> 32),
                      static_cast<uint32_t>(seed), static_cast<uint32_t>(a)};
    return Rng(seq);
}

inline uint64_t fnv1a64(std::string_view bytes, uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(uint64_t v);

// Standard normal fill, row-major order.
template <typename S>
void fill_normal(MatT<S>& m, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<S>(nd(rng));
    }
}

}  // namespace sed
