#pragma once

#include <cstdint>
#include <random>

namespace mfr {

/// SplitMix64 finalizer; a bijective 64-bit mixer.
std::uint64_t splitmix64(std::uint64_t x);

/// Combines a seed with a counter into a new, well-mixed seed.
std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value);

/// Purposes for independent per-image substreams.
enum class StreamPurpose : std::uint64_t {
    States = 1,
    Render = 2,
    LabelRender = 3,
    Shuffle = 4,
};

/// Generator for (seed, index, purpose). Streams for distinct triples are independent,
/// so generation order never affects output.
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t index, StreamPurpose purpose);

}  // namespace mfr
