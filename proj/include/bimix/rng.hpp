#pragma once

#include <cstdint>
#include <random>

namespace bimix {

/// Independent, reproducible generator for substream `stream` of `seed`.
/// std::mt19937_64 and std::seed_seq are fully specified by the standard, so
/// the sequence is identical on every conforming platform.
inline std::mt19937_64 derive_stream(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

// 64-bit seed for substream `stream`, for APIs that take a plain seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    auto gen = derive_stream(seed, stream ^ 0x9e3779b97f4a7c15ULL);
    return gen();
}

}  // namespace bimix
