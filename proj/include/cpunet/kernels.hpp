#pragma once

#include <cstddef>
#include <string_view>

// Inner loops shared by convolution, linear layers and matmul. Every table
// computes the same quantities; the SIMD tables may differ from the scalar
// reference only by floating-point reassociation.
namespace cpunet::kernels {

struct KernelTable {
    std::string_view name;

    // sum_i x[i] * y[i]
    double (*dot)(const double* x, const double* y, std::size_t n);
    // sum_i x[i * incx] * y[i]
    double (*dot_strided)(const double* x, std::size_t incx, const double* y, std::size_t n);
    // y[i] += a * x[i]
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
    // y[i] += a * x[i * incx]
    void (*axpy_gather)(double a, const double* x, std::size_t incx, double* y, std::size_t n);
    // y[i * incy] += a * x[i]
    void (*axpy_scatter)(double a, const double* x, double* y, std::size_t incy, std::size_t n);
    // z[i] = x[i] * y[i]
    void (*mul)(const double* x, const double* y, double* z, std::size_t n);
    // c[i*ldc + j] += sum_p a[i*rsa + p*csa] * b[p*ldb + j], i < m, j < n, p < k.
    // Strides on `a` let callers pass a transposed operand without copying.
    void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t rsa, std::size_t csa,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc);
};

const KernelTable& scalar_table() noexcept;

/// AVX2+FMA table, or nullptr when it was not compiled in or the running CPU
/// lacks the instructions.
const KernelTable* avx2_table() noexcept;

/// Table used by the tensor engine. Chosen once: AVX2 when available unless
/// the environment variable CPUNET_KERNELS is set to "scalar".
const KernelTable& active() noexcept;

/// Overrides the active table (tests and benchmarks). Not thread-safe; call
/// before any concurrent use of the engine.
void set_active(const KernelTable& table) noexcept;

}  // namespace cpunet::kernels
