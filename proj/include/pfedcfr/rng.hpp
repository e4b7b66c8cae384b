// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace pfedcfr {

// Deterministic RNG helpers. The mt19937_64 engine is fully specified by the
// standard; the distribution mappings below are hand-rolled because the
// std::*_distribution output sequences are implementation-defined and every
// run of this simulator must be reproducible from its seeds alone.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and up to three
// context indices (client, round, epoch, ...).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = splitmix64(base ^ splitmix64(tag));
    h = splitmix64(h ^ splitmix64(a + 0x1000000001ULL));
    h = splitmix64(h ^ splitmix64(b + 0x2000000002ULL));
    return h;
}

// Seed tags, one per consumer of randomness.
namespace seed_tag {
constexpr std::uint64_t kInit = 1;
constexpr std::uint64_t kSynthetic = 2;
constexpr std::uint64_t kPartition = 3;
constexpr std::uint64_t kShuffle = 4;
constexpr std::uint64_t kSubset = 5;
}  // namespace seed_tag

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform on [0, 1) with 53 random bits.
    double uniform01() { return (engine_() >> 11) * 0x1.0p-53; }

    // Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        // Rejection sampling on the top bits keeps the result unbiased.
        std::uint64_t mask = ~0ULL >> __builtin_clzll(n | 1);
        std::uint64_t v;
        do {
            v = engine_() & mask;
        } while (v >= n);
        return v;
    }

    // Standard normal via Box-Muller (one value per call; the pair's second
    // half is discarded to keep the consumption pattern simple).
    double normal() {
        double u1;
        do {
            u1 = uniform01();
        } while (u1 == 0.0);
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double lognormal(double mu, double sigma) { return std::exp(mu + sigma * normal()); }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace pfedcfr
