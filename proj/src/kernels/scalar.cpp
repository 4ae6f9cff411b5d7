#include "cpunet/kernels.hpp"

namespace cpunet::kernels {
namespace {

double dot(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

double dot_strided(const double* x, std::size_t incx, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i * incx] * y[i];
    return acc;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void axpy_gather(double a, const double* x, std::size_t incx, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i * incx];
}

void axpy_scatter(double a, const double* x, double* y, std::size_t incy, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i * incy] += a * x[i];
}

void mul(const double* x, const double* y, double* z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
}

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t rsa, std::size_t csa,
          const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * ldc;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * rsa + p * csa];
            const double* bp = b + p * ldb;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

}  // namespace

const KernelTable& scalar_table() noexcept {
    static const KernelTable table{"scalar", dot, dot_strided, axpy, axpy_gather, axpy_scatter, mul, gemm};
    return table;
}

}  // namespace cpunet::kernels
