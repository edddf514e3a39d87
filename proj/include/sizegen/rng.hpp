#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <vector>

namespace sizegen {

// SplitMix64 finalizer, used to derive independent seeds from tag paths.
inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Deterministic child seed for (base, a, b, c). Replicate streams are derived
// this way so sweeps give identical results regardless of scheduling.
inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = mix64(base + 0x9e3779b97f4a7c15ull);
    s = mix64(s ^ (a + 0x9e3779b97f4a7c15ull));
    s = mix64(s ^ (b + 0x632be59bd9b4e019ull));
    s = mix64(s ^ (c + 0xd6e8feb86659fd93ull));
    return s;
}

// Seeded random stream. All library sampling goes through explicit streams;
// the uniform/normal transforms are hand-rolled so results do not depend on
// the standard library's distribution implementations.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    bool bernoulli(double p) { return uniform01() < p; }

    // Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * M_PI * uniform01();
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    // Uniform integer in [lo, hi] inclusive, unbiased via rejection.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1u;
        if (span == 0) return static_cast<int64_t>(next_u64());  // full range
        const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return lo + static_cast<int64_t>(x % span);
    }

    // Index sampled proportionally to nonnegative weights.
    int discrete(const std::vector<double>& cumulative) {
        const double total = cumulative.back();
        const double u = uniform01() * total;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        if (it == cumulative.end()) --it;
        return static_cast<int>(it - cumulative.begin());
    }

    RngStream child(uint64_t tag) { return RngStream(derive_seed(next_u64(), tag)); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace sizegen
