#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>

namespace dsp {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Decorrelated seed for sub-stream `stream` of a master seed. Used wherever
// work fans out (per-trajectory, per-episode, per-filter-sample streams) so
// results do not depend on scheduling or worker count.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return splitmix64(splitmix64(master) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

// Draw interface. All distributions are built on next_u64() with fixed
// algorithms so sequences are reproducible across platforms; tests substitute
// stub sources to pin specific draws.
class RandomSource {
public:
    virtual ~RandomSource() = default;

    virtual std::uint64_t next_u64() = 0;

    // [0, 1) with 53-bit resolution
    virtual double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // standard normal via Box-Muller; no second-value caching so the draw
    // sequence depends only on the call order
    virtual double normal() {
        const double u1 = 1.0 - uniform01();  // (0, 1], keeps log() finite
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    // uniform integer in [lo, hi], inclusive
    virtual int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // unbiased integer in [0, n) by rejection
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    void fill_normal(std::span<double> out) {
        for (double& v : out) v = normal();
    }
};

// Default generator: mt19937_64 behind the RandomSource distributions.
class Rng final : public RandomSource {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

    std::uint64_t next_u64() override { return engine_(); }

    std::uint64_t seed() const { return seed_; }

    // Independent stream derived from the construction seed and `stream`
    // only; unaffected by how many draws were already taken.
    Rng child(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace dsp
