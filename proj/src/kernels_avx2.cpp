// AVX2+FMA kernel variant.  This is the only translation unit compiled with
// -mavx2 -mfma; it is reached only after the runtime CPU check in the
// dispatcher.  Arithmetic mirrors the scalar reference exactly: the Philox
// rounds are plain 32-bit integer ops, the uniform construction is exact in
// double precision, and the central inverse-CDF branch uses the same fma
// Horner chain (tail lanes fall back to the shared scalar code).

#include "bsde/kernels.hpp"

#ifdef __AVX2__

#include <immintrin.h>

#include "bsde/detail/icdf.hpp"
#include "bsde/detail/philox.hpp"

namespace bsde::kern {

namespace {

// 8 parallel 32x32->64 multiplies, returning hi and lo 32-bit halves.
inline void mulhilo8(__m256i a, std::uint32_t mul, __m256i& hi, __m256i& lo) {
    const __m256i b = _mm256_set1_epi32(static_cast<int>(mul));
    const __m256i prod_e = _mm256_mul_epu32(a, b);                          // lanes 0,2,4,6
    const __m256i prod_o = _mm256_mul_epu32(_mm256_srli_epi64(a, 32), b);   // lanes 1,3,5,7
    const __m256i lo_mask = _mm256_set1_epi64x(0xffffffffll);
    const __m256i hi_mask = _mm256_set1_epi64x(static_cast<long long>(0xffffffff00000000ull));
    lo = _mm256_or_si256(_mm256_and_si256(prod_e, lo_mask), _mm256_slli_epi64(prod_o, 32));
    hi = _mm256_or_si256(_mm256_srli_epi64(prod_e, 32), _mm256_and_si256(prod_o, hi_mask));
}

// Degree-7 rational central branch, 4 doubles at a time; coefficients match
// detail::icdf_central term for term.
inline __m256d icdf_central4(__m256d q) {
    const __m256d r = _mm256_fnmadd_pd(q, q, _mm256_set1_pd(0.180625));
    __m256d num = _mm256_set1_pd(2.5090809287301226727e3);
    num = _mm256_fmadd_pd(num, r, _mm256_set1_pd(3.3430575583588128105e4));
    num = _mm256_fmadd_pd(num, r, _mm256_set1_pd(6.7265770927008700853e4));
    num = _mm256_fmadd_pd(num, r, _mm256_set1_pd(4.5921953931549871457e4));
    num = _mm256_fmadd_pd(num, r, _mm256_set1_pd(1.3731693765509461125e4));
    num = _mm256_fmadd_pd(num, r, _mm256_set1_pd(1.9715909503065514427e3));
    num = _mm256_fmadd_pd(num, r, _mm256_set1_pd(1.3314166789178437745e2));
    num = _mm256_fmadd_pd(num, r, _mm256_set1_pd(3.3871328727963666080e0));
    __m256d den = _mm256_set1_pd(5.2264952788528545610e3);
    den = _mm256_fmadd_pd(den, r, _mm256_set1_pd(2.8729085735721942674e4));
    den = _mm256_fmadd_pd(den, r, _mm256_set1_pd(3.9307895800092710610e4));
    den = _mm256_fmadd_pd(den, r, _mm256_set1_pd(2.1213794301586595867e4));
    den = _mm256_fmadd_pd(den, r, _mm256_set1_pd(5.3941960214247511077e3));
    den = _mm256_fmadd_pd(den, r, _mm256_set1_pd(6.8718700749205790830e2));
    den = _mm256_fmadd_pd(den, r, _mm256_set1_pd(4.2313330701600911252e1));
    den = _mm256_fmadd_pd(den, r, _mm256_set1_pd(1.0));
    return _mm256_mul_pd(q, _mm256_div_pd(num, den));
}

// u (4 uniforms) -> standard normals; lanes outside the central branch are
// recomputed through the scalar tail path.
inline __m256d icdf4(__m256d u) {
    const __m256d q = _mm256_sub_pd(u, _mm256_set1_pd(0.5));
    __m256d x = icdf_central4(q);
    const __m256d absq = _mm256_andnot_pd(_mm256_set1_pd(-0.0), q);
    const __m256d tail = _mm256_cmp_pd(absq, _mm256_set1_pd(0.425), _CMP_GT_OQ);
    const int mask = _mm256_movemask_pd(tail);
    if (mask) {
        alignas(32) double ubuf[4], xbuf[4];
        _mm256_store_pd(ubuf, u);
        _mm256_store_pd(xbuf, x);
        for (int l = 0; l < 4; ++l)
            if (mask & (1 << l)) xbuf[l] = rng::detail::icdf_tail(ubuf[l], ubuf[l] - 0.5);
        x = _mm256_load_pd(xbuf);
    }
    return x;
}

void gauss_fill_avx2(std::uint64_t seed, std::uint64_t cloud, std::uint32_t m0,
                     std::uint32_t n, std::uint32_t packed, double* out) {
    const __m256i c0_init = _mm256_set1_epi32(static_cast<int>(static_cast<std::uint32_t>(cloud)));
    const __m256i c1_init = _mm256_set1_epi32(static_cast<int>(static_cast<std::uint32_t>(cloud >> 32)));
    const __m256i c3_init = _mm256_set1_epi32(static_cast<int>(packed));
    const __m256i lane = _mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7);
    const std::uint32_t k0 = static_cast<std::uint32_t>(seed);
    const std::uint32_t k1 = static_cast<std::uint32_t>(seed >> 32);

    std::uint32_t j = 0;
    for (; j + 8 <= n; j += 8) {
        __m256i c0 = c0_init, c1 = c1_init, c3 = c3_init;
        __m256i c2 = _mm256_add_epi32(_mm256_set1_epi32(static_cast<int>(m0 + j)), lane);
        __m256i k0v = _mm256_set1_epi32(static_cast<int>(k0));
        __m256i k1v = _mm256_set1_epi32(static_cast<int>(k1));
        const __m256i w0 = _mm256_set1_epi32(static_cast<int>(rng::detail::kWeyl0));
        const __m256i w1 = _mm256_set1_epi32(static_cast<int>(rng::detail::kWeyl1));
        for (int round = 0; round < 10; ++round) {
            __m256i hi0, lo0, hi1, lo1;
            mulhilo8(c0, rng::detail::kMul0, hi0, lo0);
            mulhilo8(c2, rng::detail::kMul1, hi1, lo1);
            c0 = _mm256_xor_si256(_mm256_xor_si256(hi1, c1), k0v);
            c1 = lo1;
            c2 = _mm256_xor_si256(_mm256_xor_si256(hi0, c3), k1v);
            c3 = lo0;
            k0v = _mm256_add_epi32(k0v, w0);
            k1v = _mm256_add_epi32(k1v, w1);
        }
        // u64 = (x0 << 32) | x1 per lane, then top 52 bits -> uniform.
        const __m256i lo_pairs = _mm256_unpacklo_epi32(c1, c0); // lanes 0,1,4,5
        const __m256i hi_pairs = _mm256_unpackhi_epi32(c1, c0); // lanes 2,3,6,7
        const __m256i u64a = _mm256_permute2x128_si256(lo_pairs, hi_pairs, 0x20);
        const __m256i u64b = _mm256_permute2x128_si256(lo_pairs, hi_pairs, 0x31);
        const __m256i magic = _mm256_set1_epi64x(0x4330000000000000ll); // 2^52
        auto to_unif = [&](__m256i u64) {
            const __m256i v = _mm256_srli_epi64(u64, 12);
            const __m256d dv = _mm256_sub_pd(_mm256_castsi256_pd(_mm256_or_si256(v, magic)),
                                             _mm256_set1_pd(0x1.0p52));
            return _mm256_add_pd(_mm256_mul_pd(dv, _mm256_set1_pd(0x1.0p-52)),
                                 _mm256_set1_pd(0x1.0p-53));
        };
        _mm256_storeu_pd(out + j, icdf4(to_unif(u64a)));
        _mm256_storeu_pd(out + j + 4, icdf4(to_unif(u64b)));
    }
    for (; j < n; ++j) {
        const double u = rng::detail::uniform_from_bits(rng::detail::bits64(seed, cloud, m0 + j, packed));
        out[j] = rng::detail::normal_icdf_impl(u);
    }
}

void gram_acc_avx2(double* G, const double* F, std::size_t n, std::size_t K) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* f = F + i * K;
        for (std::size_t a = 0; a < K; ++a) {
            const __m256d fa = _mm256_set1_pd(f[a]);
            double* g = G + a * K;
            std::size_t b = 0;
            for (; b + 4 <= K; b += 4)
                _mm256_storeu_pd(g + b, _mm256_fmadd_pd(fa, _mm256_loadu_pd(f + b),
                                                        _mm256_loadu_pd(g + b)));
            for (; b < K; ++b) g[b] = std::fma(f[a], f[b], g[b]);
        }
    }
}

void rhs_acc_avx2(double* R, const double* F, const double* Y, std::size_t n,
                  std::size_t K, std::size_t a) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* f = F + i * K;
        const double* y = Y + i * a;
        for (std::size_t c = 0; c < a; ++c) {
            const __m256d yc = _mm256_set1_pd(y[c]);
            double* r = R + c * K;
            std::size_t j = 0;
            for (; j + 4 <= K; j += 4)
                _mm256_storeu_pd(r + j, _mm256_fmadd_pd(yc, _mm256_loadu_pd(f + j),
                                                        _mm256_loadu_pd(r + j)));
            for (; j < K; ++j) r[j] = std::fma(y[c], f[j], r[j]);
        }
    }
}

} // namespace

const Table avx2_table = {"avx2", gauss_fill_avx2, gram_acc_avx2, rhs_acc_avx2};

} // namespace bsde::kern

#else // !__AVX2__: this build cannot emit AVX2 code; dispatcher skips it.

namespace bsde::kern {
const Table avx2_table = {nullptr, nullptr, nullptr, nullptr};
} // namespace bsde::kern

#endif
