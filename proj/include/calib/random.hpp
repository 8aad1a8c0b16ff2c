#pragma once

#include <cstdint>
#include <random>

namespace calib {

using Rng = std::mt19937_64;

/// Independent stream for (seed, stream tag, index). Used wherever work items
/// need their own reproducible randomness regardless of processing order.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    return Rng(seq);
}

namespace streams {
inline constexpr std::uint64_t kLhs = 1;
inline constexpr std::uint64_t kTimeGrid = 2;
inline constexpr std::uint64_t kNoise = 3;
inline constexpr std::uint64_t kInit = 4;
inline constexpr std::uint64_t kShuffle = 5;
inline constexpr std::uint64_t kFlowDraw = 6;
inline constexpr std::uint64_t kPosterior = 7;
inline constexpr std::uint64_t kMultistart = 8;
} // namespace streams

} // namespace calib
