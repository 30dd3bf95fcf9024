#pragma once
// Philox-4x32-10 scalar reference.  Shared by the plain RNG entry points and
// the scalar kernel variant; the AVX2 variant re-implements the identical
// arithmetic eight counters at a time.

#include <array>
#include <cstdint>

namespace bsde::rng::detail {

inline constexpr std::uint32_t kMul0 = 0xD2511F53u;
inline constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
inline constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void philox_round(std::array<std::uint32_t, 4>& c, std::array<std::uint32_t, 2>& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
    const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
    const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    k[0] += kWeyl0;
    k[1] += kWeyl1;
}

inline std::array<std::uint32_t, 4> philox10(std::array<std::uint32_t, 4> c,
                                             std::array<std::uint32_t, 2> k) {
    for (int r = 0; r < 10; ++r) philox_round(c, k);
    return c;
}

inline std::uint64_t bits64(std::uint64_t seed, std::uint64_t cloud, std::uint32_t m,
                            std::uint32_t packed) {
    const std::array<std::uint32_t, 4> ctr = {
        static_cast<std::uint32_t>(cloud), static_cast<std::uint32_t>(cloud >> 32), m, packed};
    const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed),
                                              static_cast<std::uint32_t>(seed >> 32)};
    const auto x = philox10(ctr, key);
    return (static_cast<std::uint64_t>(x[0]) << 32) | x[1];
}

// Top 52 bits -> uniform in (0,1), never returning 0 or 1.  All steps are
// exact in double precision, so plain multiply/add is reproducible verbatim
// in the vector variant.
inline double uniform_from_bits(std::uint64_t b) {
    const std::uint64_t v = b >> 12;
    return static_cast<double>(v) * 0x1.0p-52 + 0x1.0p-53;
}

} // namespace bsde::rng::detail
