#pragma once

#include <cstdint>
#include <random>

namespace sfa {

using Rng = std::mt19937_64;

// Counter-based seed derivation: adding chains/trials never perturbs the
// streams of existing ones.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t counter) {
    // splitmix64 finaliser
    std::uint64_t x = master + 0x9e3779b97f4a7c15ULL * (counter + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

}  // namespace sfa
