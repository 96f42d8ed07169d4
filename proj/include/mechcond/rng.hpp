#pragma once

// Counter-based random streams.
//
// Every noise process in a simulation draws from its own stream, keyed by
// (seed, role, index). A sample is a pure function of (key, counter), so
// trajectories are bit-reproducible regardless of evaluation order or thread
// count, and two modes that share a stream see bit-identical noise.

#include <cmath>
#include <cstdint>

namespace mechcond {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace detail

inline std::uint64_t mix_key(std::uint64_t a, std::uint64_t b) {
    return detail::splitmix64(detail::splitmix64(a) ^ (0x9e3779b97f4a7c15ull + b));
}

enum class NoiseRole : std::uint64_t {
    Thermal = 1,
    Backaction = 2,
    Shot = 3,
    NoiseComponent = 4,
    Perturbation = 5,
};

class CounterRng {
public:
    CounterRng(std::uint64_t seed, NoiseRole role, std::uint64_t index = 0)
        : key_(mix_key(mix_key(seed, static_cast<std::uint64_t>(role)), index)) {}

    explicit CounterRng(std::uint64_t raw_key) : key_(raw_key) {}

    // Uniform in (0, 1]; never returns 0 so log() below is safe.
    double uniform(std::uint64_t counter) const {
        const std::uint64_t u = detail::splitmix64(key_ ^ detail::splitmix64(counter));
        return (double(u >> 11) + 1.0) * 0x1.0p-53;
    }

    // Independent standard normal pair for a given counter (Box-Muller).
    void gaussian_pair(std::uint64_t counter, double& g1, double& g2) const {
        const double u1 = uniform(2 * counter);
        const double u2 = uniform(2 * counter + 1);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        g1 = r * std::cos(a);
        g2 = r * std::sin(a);
    }

    std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_;
};

}  // namespace mechcond
