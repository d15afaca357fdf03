#pragma once

#include <cstdint>
#include <random>

namespace alamo {

/// Seedable 64-bit generator with portable derived distributions.
///
/// The engine is std::mt19937_64, whose raw output sequence is fixed by the
/// C++ standard. The standard distributions are implementation-defined, so the
/// uniform, integer and Gaussian draws below are computed from the raw words
/// directly; given a seed every conforming platform produces the same stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    /// Independent generator for a (seed, stream) pair. Used to give every
    /// training step its own stream, so a resumed run replays the same draws.
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        return Rng(splitmix64(seed ^ splitmix64(stream + 0x9E3779B97F4A7C15ULL)));
    }

    static std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi].
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [lo, hi] (inclusive), unbiased by rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    bool bernoulli(double p) { return uniform01() < p; }

    /// Standard normal draw via Box-Muller (one value per call).
    double normal();

private:
    std::mt19937_64 engine_;
};

}  // namespace alamo
