#include "mfr/rng.hpp"

namespace mfr {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) {
    return splitmix64(splitmix64(seed) ^ (value + 0x632BE59BD9B4E019ULL));
}

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t index, StreamPurpose purpose) {
    const std::uint64_t s = hash_combine(hash_combine(seed, static_cast<std::uint64_t>(purpose)), index);
    std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace mfr
