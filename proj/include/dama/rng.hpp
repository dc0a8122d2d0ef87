#pragma once

// Deterministic random streams: xoshiro256** seeded through splitmix64.
// Every source of randomness in the project (init, dropout, shuffling,
// splits, synthetic data) draws from a stream derived from the master
// seed plus a purpose tag, so runs are reproducible bit-for-bit across
// platforms. std:: distributions are avoided on purpose: their output
// is implementation-defined.

#include <cstdint>
#include <string_view>
#include <vector>

namespace dama {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0) {
        // splitmix64 expansion: well-defined for every seed, including 0.
        std::uint64_t sm = seed;
        for (auto& word : state_) {
            word = splitmix64_next(sm);
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform double in [0, 1) built from the top 53 bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Uniform integer in [0, n). Modulo bias is < 2^-53 for any n we use.
    std::uint64_t next_below(std::uint64_t n) {
        return next_u64() % n;
    }

    bool bernoulli(double p) { return next_double() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4];
};

inline RngStream rng_stream(std::uint64_t seed) { return RngStream(seed); }

// Seed for a named sub-purpose. The derivation is pure: same (seed, tag)
// always yields the same value.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
    std::uint64_t sm = seed;
    std::uint64_t mixed = splitmix64_next(sm) ^ fnv1a64(tag);
    return splitmix64_next(mixed);
}

inline RngStream derive_stream(std::uint64_t seed, std::string_view tag) {
    return RngStream(derive_seed(seed, tag));
}

} // namespace dama
