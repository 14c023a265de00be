#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>

namespace engage {

using Engine = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Seed of the independent stream `stream` under master seed `master`:
//   splitmix64(splitmix64(master) ^ splitmix64(stream + 1)).
// Sessions and rollout blocks each own one stream, so their output does not
// depend on how work is split across threads.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
    return splitmix64(splitmix64(master) ^ splitmix64(stream + 1));
}

inline Engine stream_engine(std::uint64_t master, std::uint64_t stream) {
    return Engine(derive_seed(master, stream));
}

inline double uniform01(Engine& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline bool bernoulli(Engine& rng, double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return uniform01(rng) < p;
}

// Cumulative table for `probs`. The last entry with positive mass and every
// entry after it are pinned to exactly 1, so zero-mass entries are never drawn.
inline void build_cdf(std::span<const double> probs, std::span<double> cdf) {
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        cdf[i] = acc;
        if (probs[i] > 0.0) last_positive = i;
    }
    for (std::size_t i = last_positive; i < probs.size(); ++i) cdf[i] = 1.0;
}

inline std::size_t sample_cdf(std::span<const double> cdf, Engine& rng) {
    const double u = uniform01(rng);
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return static_cast<std::size_t>(it - cdf.begin());
}

}  // namespace engage
