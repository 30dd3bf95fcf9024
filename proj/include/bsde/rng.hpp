#pragma once
// Counter-based random numbers.
//
// Every Gaussian draw in the library is a pure function of
//   (seed, cloud id, path index m, packed step/component/stream tag),
// evaluated through Philox-4x32-10.  Nothing is stateful: increments can be
// regenerated on demand instead of stored (halving cloud memory), clouds can
// be built in any order or in parallel, and two runs with the same plan are
// bit-identical.
//
// Counter layout:  ctr = { lo32(cloud), hi32(cloud), m, packed }
// Key layout:      key = { lo32(seed),  hi32(seed) }
// packed = (stream << 28) | (step << 3) | component,
//   step < 2^25 (time index; levels are capped far below this),
//   component < 8 (Brownian dimension q <= 8 per draw batch tag),
//   stream: see Stream below.
//
// Cloud ids partition the counter space between independent cloud families;
// see cloud_id().  One double is produced per counter from the first two
// 32-bit output words (top 52 bits -> uniform in (0,1) -> inverse normal CDF).

#include <array>
#include <cstdint>

namespace bsde::rng {

// Raw Philox-4x32-10 block (exposed for known-answer tests).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key);

// Sub-streams within one cloud.
enum class Stream : std::uint32_t {
    increment = 0, // Brownian increments driving stored paths
    init = 1,      // one-shot exact transition to a cloud's start time
    aux = 2,       // any extra per-cloud randomness (probe marginals, ...)
};

inline std::uint32_t pack(Stream s, std::uint32_t step, std::uint32_t component) {
    return (static_cast<std::uint32_t>(s) << 28) | (step << 3) | component;
}

// Independent cloud families.  The id encodes what a cloud is for, so
// training, evaluation, probe, and reference clouds can never collide.
enum class Domain : std::uint64_t {
    level = 1,     // one shared cloud per multilevel level (a = level k)
    per_time = 2,  // per-time-point clouds (a = level k, b = time index i)
    eval = 3,      // evaluation clouds
    probe = 4,     // partition calibration probes
    reference = 5, // brute-force / reference oracle builds
    test = 6,      // unit-test scratch
};

inline std::uint64_t cloud_id(Domain d, std::uint64_t a = 0, std::uint64_t b = 0,
                              std::uint64_t salt = 0) {
    return (static_cast<std::uint64_t>(d) << 56) | (salt << 48) | (a << 28) | b;
}

// Single scalar draws (tests and low-volume uses; the hot path goes through
// the kern::gauss_fill kernels which produce identical values in bulk).
std::uint64_t uniform_bits(std::uint64_t seed, std::uint64_t cloud, std::uint32_t m,
                           std::uint32_t packed);
double uniform01(std::uint64_t seed, std::uint64_t cloud, std::uint32_t m,
                 std::uint32_t packed);
double gauss(std::uint64_t seed, std::uint64_t cloud, std::uint32_t m, std::uint32_t packed);

} // namespace bsde::rng
