#pragma once

#include <cstdint>
#include <random>

namespace qdarbor {

// splitmix64; used to derive independent seed streams from (seed, purpose, indices)
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
    return mix64(mix64(mix64(mix64(seed) ^ a) ^ b) ^ c);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                    std::uint64_t c = 0) {
    return Rng(derive_seed(seed, a, b, c));
}

// Stream purposes: keep ids stable, checkpoint resume relies on them.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kAsk = 2;
inline constexpr std::uint64_t kJacobian = 3;
inline constexpr std::uint64_t kWalk = 4;
inline constexpr std::uint64_t kBranchEval = 5;
inline constexpr std::uint64_t kSearchEval = 6;
inline constexpr std::uint64_t kTeleport = 7;
inline constexpr std::uint64_t kCorrect = 8;
}  // namespace stream

}  // namespace qdarbor
