#pragma once

#include <cstdint>
#include <cmath>
#include <cstddef>
#include <vector>

namespace chaoscope {

// Deterministic PRNG used everywhere instead of <random> engines+distributions:
// the standard distributions are implementation-defined, which would break the
// bitwise reproducibility contract across toolchains. SplitMix64 is fixed by
// construction.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Unbiased integer in [0, n) via rejection sampling (Lemire-style bound).
    std::uint64_t next_below(std::uint64_t n);

    // Standard normal via Box-Muller; the spare value is cached.
    double next_gaussian();

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Seeded Fisher-Yates permutation of {0, ..., n-1}.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

// Mixes a stream tag into a base seed so independent weight matrices get
// independent streams from one model seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

} // namespace chaoscope
