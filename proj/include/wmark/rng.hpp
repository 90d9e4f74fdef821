#pragma once

#include <cmath>
#include <cstdint>

namespace wmark {

// Counter-based PRNG (splitmix64 finalizer over seed + counter).
// Stateless per draw: output depends only on (seed, stream, counter), so
// sequences are reproducible across platforms and independent of call-site
// history. Used everywhere randomness must be replayable from a config seed.
class CounterRng {
public:
    explicit CounterRng(uint64_t seed, uint64_t stream = 0)
        : base_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ULL))) {}

    uint64_t next_u64() { return mix(base_ + (++counter_) * kGolden); }

    // Uniform on [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; the pair's second value is cached.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0,1], keeps log finite
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Uniform integer in [0, n) without modulo bias (Lemire reduction).
    uint64_t below(uint64_t n) {
        return static_cast<uint64_t>(
            (static_cast<__uint128_t>(next_u64()) * static_cast<__uint128_t>(n)) >> 64);
    }

    static uint64_t mix(uint64_t z) {
        z += kGolden;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
    uint64_t base_;
    uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace wmark
