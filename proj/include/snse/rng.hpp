#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace snse {

// Deterministic RNG helpers. Distributions are hand-rolled so that byte-exact
// goldens do not depend on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform integer in [0, n), n >= 1.
    uint64_t next_below(uint64_t n) {
        // Rejection sampling to avoid modulo bias.
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % n;
    }

    int next_int(int lo, int hi) { // inclusive range
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Uniform double in [0, 1).
    double next_real() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double next_real(double lo, double hi) { return lo + (hi - lo) * next_real(); }

private:
    std::mt19937_64 engine_;
};

// FNV-1a over a string; used to derive independent per-(record, epoch, method)
// streams from one master seed so generation order never matters.
inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t derive_seed(uint64_t master, std::string_view key) {
    uint64_t h = fnv1a(key);
    // splitmix64 finalizer to decorrelate master and key
    uint64_t z = master + 0x9e3779b97f4a7c15ull + h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace snse
