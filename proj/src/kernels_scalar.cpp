// Portable scalar reference kernels.  Every arithmetic step here defines the
// contract the SIMD variants must reproduce bit for bit: explicit fma chains,
// fixed accumulation order, no reassociation.

#include "bsde/detail/icdf.hpp"
#include "bsde/detail/philox.hpp"
#include "bsde/kernels.hpp"

namespace bsde::kern {

namespace {

void gauss_fill_scalar(std::uint64_t seed, std::uint64_t cloud, std::uint32_t m0,
                       std::uint32_t n, std::uint32_t packed, double* out) {
    for (std::uint32_t j = 0; j < n; ++j) {
        const double u = rng::detail::uniform_from_bits(rng::detail::bits64(seed, cloud, m0 + j, packed));
        out[j] = rng::detail::normal_icdf_impl(u);
    }
}

void gram_acc_scalar(double* G, const double* F, std::size_t n, std::size_t K) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* f = F + i * K;
        for (std::size_t a = 0; a < K; ++a) {
            const double fa = f[a];
            double* g = G + a * K;
            for (std::size_t b = 0; b < K; ++b) g[b] = std::fma(fa, f[b], g[b]);
        }
    }
}

// R is a x K row-major (component-major) so the inner loop is contiguous.
void rhs_acc_scalar(double* R, const double* F, const double* Y, std::size_t n,
                    std::size_t K, std::size_t a) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* f = F + i * K;
        const double* y = Y + i * a;
        for (std::size_t c = 0; c < a; ++c) {
            const double yc = y[c];
            double* r = R + c * K;
            for (std::size_t j = 0; j < K; ++j) r[j] = std::fma(yc, f[j], r[j]);
        }
    }
}

} // namespace

const Table scalar_table = {"scalar", gauss_fill_scalar, gram_acc_scalar, rhs_acc_scalar};

double normal_icdf(double p) { return rng::detail::normal_icdf_impl(p); }

} // namespace bsde::kern
