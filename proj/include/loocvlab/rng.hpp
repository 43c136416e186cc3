#pragma once

#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <random>

namespace loocvlab {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Folds a sequence of keys into one 64-bit stream key.
inline std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x6a09e667f3bcc909ULL;
    for (std::uint64_t p : parts) h = mix64(h ^ mix64(p));
    return h;
}

inline std::uint64_t double_bits(double v) {
    if (v == 0.0) v = 0.0;  // fold -0 into +0
    std::uint64_t u;
    std::memcpy(&u, &v, sizeof u);
    return u;
}

/// Independent generator for a derived key.
inline Rng substream(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t k = derive_key(parts);
    std::seed_seq seq{static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32),
                      static_cast<std::uint32_t>(mix64(k)), static_cast<std::uint32_t>(mix64(k) >> 32)};
    return Rng(seq);
}

}  // namespace loocvlab
