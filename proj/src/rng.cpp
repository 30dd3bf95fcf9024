#include "bsde/rng.hpp"

#include "bsde/detail/icdf.hpp"
#include "bsde/detail/philox.hpp"

namespace bsde::rng {

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
    return detail::philox10(ctr, key);
}

std::uint64_t uniform_bits(std::uint64_t seed, std::uint64_t cloud, std::uint32_t m,
                           std::uint32_t packed) {
    return detail::bits64(seed, cloud, m, packed);
}

double uniform01(std::uint64_t seed, std::uint64_t cloud, std::uint32_t m, std::uint32_t packed) {
    return detail::uniform_from_bits(detail::bits64(seed, cloud, m, packed));
}

double gauss(std::uint64_t seed, std::uint64_t cloud, std::uint32_t m, std::uint32_t packed) {
    return detail::normal_icdf_impl(uniform01(seed, cloud, m, packed));
}

} // namespace bsde::rng
