// Compiled with -mavx2 -mfma. Only reached through avx2_table() after a
// runtime CPU check.
#include <immintrin.h>

#include <algorithm>

#include "cpunet/kernels.hpp"

namespace cpunet::kernels {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

// Even lanes of x[0..7] as [x0 x2 x4 x6].
inline __m256d load_even(const double* x) {
    __m256d a = _mm256_loadu_pd(x);
    __m256d b = _mm256_loadu_pd(x + 4);
    return _mm256_permute4x64_pd(_mm256_unpacklo_pd(a, b), _MM_SHUFFLE(3, 1, 2, 0));
}

double dot(const double* x, const double* y, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    __m256d acc2 = _mm256_setzero_pd();
    __m256d acc3 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
        acc2 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 8), _mm256_loadu_pd(y + i + 8), acc2);
        acc3 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 12), _mm256_loadu_pd(y + i + 12), acc3);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    }
    double acc = hsum(_mm256_add_pd(_mm256_add_pd(acc0, acc1), _mm256_add_pd(acc2, acc3)));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

double dot_strided(const double* x, std::size_t incx, const double* y, std::size_t n) {
    if (incx == 1) return dot(x, y, n);
    double acc = 0.0;
    std::size_t i = 0;
    if (incx == 2) {
        __m256d vacc = _mm256_setzero_pd();
        // x[2i + 7] must stay inside the row, which ends at x[2(n-1)].
        for (; i + 4 < n; i += 4) {
            vacc = _mm256_fmadd_pd(load_even(x + 2 * i), _mm256_loadu_pd(y + i), vacc);
        }
        acc = hsum(vacc);
    }
    for (; i < n; ++i) acc += x[i * incx] * y[i];
    return acc;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
        _mm256_storeu_pd(y + i + 4,
                         _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
    }
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void axpy_gather(double a, const double* x, std::size_t incx, double* y, std::size_t n) {
    if (incx == 1) {
        axpy(a, x, y, n);
        return;
    }
    std::size_t i = 0;
    if (incx == 2) {
        const __m256d va = _mm256_set1_pd(a);
        for (; i + 4 < n; i += 4) {
            _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, load_even(x + 2 * i), _mm256_loadu_pd(y + i)));
        }
    }
    for (; i < n; ++i) y[i] += a * x[i * incx];
}

void axpy_scatter(double a, const double* x, double* y, std::size_t incy, std::size_t n) {
    if (incy == 1) {
        axpy(a, x, y, n);
        return;
    }
    std::size_t i = 0;
    if (incy == 2) {
        const __m256d va = _mm256_set1_pd(a);
        const __m256d zero = _mm256_setzero_pd();
        for (; i + 4 < n; i += 4) {
            // [v0 v1 v2 v3] -> [v0 0 v1 0] and [v2 0 v3 0]
            __m256d v = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
            __m256d p = _mm256_permute4x64_pd(v, _MM_SHUFFLE(3, 1, 2, 0));
            double* dst = y + 2 * i;
            __m256d lo = _mm256_loadu_pd(dst);
            __m256d hi = _mm256_loadu_pd(dst + 4);
            // Odd lanes belong to other outputs and must keep their exact bits.
            _mm256_storeu_pd(dst, _mm256_blend_pd(lo, _mm256_add_pd(lo, _mm256_unpacklo_pd(p, zero)), 0b0101));
            _mm256_storeu_pd(dst + 4,
                             _mm256_blend_pd(hi, _mm256_add_pd(hi, _mm256_unpackhi_pd(p, zero)), 0b0101));
        }
    }
    for (; i < n; ++i) y[i * incy] += a * x[i];
}

void mul(const double* x, const double* y, double* z, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(z + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) z[i] = x[i] * y[i];
}

// 4x8 block of C held in eight registers while p runs over all of k.
inline void gemm_block(std::size_t k, const double* a, std::size_t rsa, std::size_t csa, const double* b,
                       std::size_t ldb, double* c, std::size_t ldc) {
    __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
    __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
    __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
    __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
    const double* a0 = a;
    const double* a1 = a + rsa;
    const double* a2 = a + 2 * rsa;
    const double* a3 = a + 3 * rsa;
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
        const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
        const std::size_t off = p * csa;
        __m256d x = _mm256_broadcast_sd(a0 + off);
        c00 = _mm256_fmadd_pd(x, b0, c00);
        c01 = _mm256_fmadd_pd(x, b1, c01);
        x = _mm256_broadcast_sd(a1 + off);
        c10 = _mm256_fmadd_pd(x, b0, c10);
        c11 = _mm256_fmadd_pd(x, b1, c11);
        x = _mm256_broadcast_sd(a2 + off);
        c20 = _mm256_fmadd_pd(x, b0, c20);
        c21 = _mm256_fmadd_pd(x, b1, c21);
        x = _mm256_broadcast_sd(a3 + off);
        c30 = _mm256_fmadd_pd(x, b0, c30);
        c31 = _mm256_fmadd_pd(x, b1, c31);
    }
    auto store = [](double* row, __m256d lo, __m256d hi) {
        _mm256_storeu_pd(row, _mm256_add_pd(_mm256_loadu_pd(row), lo));
        _mm256_storeu_pd(row + 4, _mm256_add_pd(_mm256_loadu_pd(row + 4), hi));
    };
    store(c, c00, c01);
    store(c + ldc, c10, c11);
    store(c + 2 * ldc, c20, c21);
    store(c + 3 * ldc, c30, c31);
}

// Leftover rows or columns.
inline void gemm_edge(std::size_t i0, std::size_t i1, std::size_t j0, std::size_t j1, std::size_t k, const double* a,
                      std::size_t rsa, std::size_t csa, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * rsa + p * csa];
            const double* bp = b + p * ldb;
            for (std::size_t j = j0; j < j1; ++j) c[i * ldc + j] += aip * bp[j];
        }
    }
}

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t rsa, std::size_t csa,
          const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    // k is cut into panels so the slice of b a block walks stays cached
    // while the other blocks reuse it. A short, wide c (few rows, long b
    // rows) wants thin panels; a tall c wants long ones.
    const std::size_t kc = m >= n ? 256 : 64;
    const std::size_t mb = m - m % 4, nb = n - n % 8;
    for (std::size_t p0 = 0; p0 < k; p0 += kc) {
        const std::size_t kk = std::min(kc, k - p0);
        const double* ap = a + p0 * csa;
        const double* bp = b + p0 * ldb;
        for (std::size_t i = 0; i < mb; i += 4)
            for (std::size_t j = 0; j < nb; j += 8)
                gemm_block(kk, ap + i * rsa, rsa, csa, bp + j, ldb, c + i * ldc + j, ldc);
        if (nb < n) gemm_edge(0, mb, nb, n, kk, ap, rsa, csa, bp, ldb, c, ldc);
        if (mb < m) gemm_edge(mb, m, 0, n, kk, ap, rsa, csa, bp, ldb, c, ldc);
    }
}

}  // namespace

const KernelTable& avx2_kernels() noexcept {
    static const KernelTable table{"avx2", dot, dot_strided, axpy, axpy_gather, axpy_scatter, mul, gemm};
    return table;
}

}  // namespace cpunet::kernels
