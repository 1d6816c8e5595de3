#pragma once

#include <cstdint>
#include <random>

namespace claimcast {

// splitmix64 (Steele, Lea, Flood; public domain). Used only to derive
// decorrelated sub-stream seeds, never as the working generator.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Seed for a named sub-stream of (seed, entity). Entities (e.g. patients)
// get independent streams, so generation order and worker count cannot
// change the output.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t entity, std::uint64_t stream = 0) {
    return splitmix64(splitmix64(splitmix64(seed) ^ entity) ^ stream);
}

// Uniform in [0, 1) from a hash value.
inline double hash_to_unit(std::uint64_t h) {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t entity, std::uint64_t stream = 0) {
    return std::mt19937_64(derive_seed(seed, entity, stream));
}

// Stream tags; values are arbitrary but frozen for reproducibility.
namespace stream {
inline constexpr std::uint64_t events = 0x45564e54;      // patient service events
inline constexpr std::uint64_t demographics = 0x44454d4f;
inline constexpr std::uint64_t treatment = 0x54524541;   // treatment-day draw
inline constexpr std::uint64_t sampling = 0x53414d50;    // negative subsampling
inline constexpr std::uint64_t training = 0x5452414e;    // model init/shuffle/dropout
}  // namespace stream

}  // namespace claimcast
