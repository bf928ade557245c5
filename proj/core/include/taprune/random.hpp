#pragma once

#include <cstdint>
#include <random>

namespace taprune {

/// Seeded generator owned by a single run. mt19937_64 is fully specified by
/// the standard, so uniform draws are reproducible across platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Strictly inside (0, 1).
    double uniform_open()
    {
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal(double mean, double sd)
    {
        std::normal_distribution<double> dist(mean, sd);
        return dist(engine_);
    }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n)
    {
        std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
        return dist(engine_);
    }

    bool bernoulli(double p) { return uniform_open() < p; }

    std::mt19937_64& engine() { return engine_; }

    // Deterministic child stream for a named purpose.
    Rng fork(std::uint64_t salt) { return Rng(engine_() ^ (salt * 0x9E3779B97F4A7C15ULL)); }

private:
    std::mt19937_64 engine_;
};

}  // namespace taprune
