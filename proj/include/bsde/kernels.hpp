#pragma once
// Runtime-dispatched compute kernels.
//
// Two implementations of the hot loops ship: a portable scalar reference
// (kernels_scalar.cpp) and an AVX2+FMA variant (kernels_avx2.cpp, the only
// translation unit compiled with -mavx2).  Selection happens once at runtime
// from CPUID, or explicitly via select().  The variants are bit-identical by
// construction -- same operation order, explicit fma everywhere -- and the
// test suite verifies equality on large batches, so numerical results never
// depend on the machine the binary happens to run on.

#include <cstddef>
#include <cstdint>
#include <string>

namespace bsde::kern {

struct Table {
    const char* name;
    // out[j] = N(0,1) draw for counter (seed, cloud, m0 + j, packed), j < n.
    void (*gauss_fill)(std::uint64_t seed, std::uint64_t cloud, std::uint32_t m0,
                       std::uint32_t n, std::uint32_t packed, double* out);
    // G (K x K row-major, full square) += sum over rows of F: f f^T.
    // F is n x K row-major.
    void (*gram_acc)(double* G, const double* F, std::size_t n, std::size_t K);
    // R (a x K row-major) += Y^T F with Y n x a row-major, i.e. one response
    // row per output component (the layout FitAccumulator::rhs_t exposes).
    void (*rhs_acc)(double* R, const double* F, const double* Y, std::size_t n,
                    std::size_t K, std::size_t a);
};

extern const Table scalar_table;
extern const Table avx2_table; // name == nullptr when unavailable at build time

bool cpu_has_avx2();
const Table& active();
// "auto" (default), "scalar", or "avx2"; throws ConfigError if unavailable.
void select(const std::string& name);
std::string available(); // comma-separated variant list

// Scalar reference inverse normal CDF (exported for tests and oracles).
// Maximum relative error ~1e-15 over (0,1); strictly increasing.
double normal_icdf(double p);

} // namespace bsde::kern
