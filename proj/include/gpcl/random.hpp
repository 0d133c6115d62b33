#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace gpcl {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a) {
    return mix_seed(mix_seed(base) ^ a);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return derive_seed(derive_seed(base, a), b);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b,
                                    std::uint64_t c) {
    return derive_seed(derive_seed(base, a, b), c);
}

// Uniform double in [lo, hi) from the top 53 bits; stable across standard libraries.
inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
inline std::vector<int> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
    k = std::min(k, n);
    std::vector<int> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + uniform_index(rng, n - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

inline std::vector<int> random_permutation(std::size_t n, Rng& rng) {
    return sample_without_replacement(n, n, rng);
}

} // namespace gpcl
