#pragma once

#include <cstdint>
#include <random>

namespace gridshield {

using Rng = std::mt19937_64;

/// Independent stream keyed by (seed, index, tag). Streams for different
/// samples do not depend on the order in which they are drawn.
inline Rng make_stream(std::uint64_t seed, std::uint64_t index, std::uint64_t tag = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      static_cast<std::uint32_t>(tag)};
    return Rng(seq);
}

// Stream tags, so that one user seed can feed several unrelated draws.
inline constexpr std::uint64_t kLoadStream = 1;
inline constexpr std::uint64_t kNoiseStream = 2;
inline constexpr std::uint64_t kAttackStream = 3;
inline constexpr std::uint64_t kSplitStream = 4;
inline constexpr std::uint64_t kMeanStream = 5;

}  // namespace gridshield
