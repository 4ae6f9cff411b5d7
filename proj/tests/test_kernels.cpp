#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "cpunet/kernels.hpp"
#include "support.hpp"

using namespace cpunet;

namespace {

bool close(double a, double b, double tol = 1e-12) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("avx2 kernels agree with the scalar reference") {
    const kernels::KernelTable* simd = kernels::avx2_table();
    if (simd == nullptr) {
        MESSAGE("AVX2 table unavailable on this CPU, nothing to compare");
        return;
    }
    const kernels::KernelTable& ref = kernels::scalar_table();
    std::mt19937_64 rng(11);
    for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 15u, 16u, 33u, 257u}) {
        for (std::size_t inc : {1u, 2u, 3u}) {
            CAPTURE(n);
            CAPTURE(inc);
            const auto x = testing::uniform(n * inc + 1, rng);
            const auto y = testing::uniform(n * inc + 1, rng);
            CHECK(close(simd->dot(x.data(), y.data(), n), ref.dot(x.data(), y.data(), n)));
            CHECK(close(simd->dot_strided(x.data(), inc, y.data(), n), ref.dot_strided(x.data(), inc, y.data(), n)));

            auto a = y, b = y;
            simd->axpy(0.37, x.data(), a.data(), n);
            ref.axpy(0.37, x.data(), b.data(), n);
            for (std::size_t i = 0; i < a.size(); ++i) CHECK(close(a[i], b[i]));

            a = y, b = y;
            simd->axpy_gather(-1.3, x.data(), inc, a.data(), n);
            ref.axpy_gather(-1.3, x.data(), inc, b.data(), n);
            for (std::size_t i = 0; i < a.size(); ++i) CHECK(close(a[i], b[i]));

            a = y, b = y;
            simd->axpy_scatter(0.8, x.data(), a.data(), inc, n);
            ref.axpy_scatter(0.8, x.data(), b.data(), inc, n);
            for (std::size_t i = 0; i < a.size(); ++i) CHECK(close(a[i], b[i]));

            std::vector<double> z1(n), z2(n);
            simd->mul(x.data(), y.data(), z1.data(), n);
            ref.mul(x.data(), y.data(), z2.data(), n);
            CHECK(z1 == z2);
        }
    }
}

TEST_CASE("scatter leaves the skipped lanes untouched") {
    const kernels::KernelTable* simd = kernels::avx2_table();
    if (simd == nullptr) return;
    std::vector<double> x(9, 1.0), y(18, 5.0);
    simd->axpy_scatter(2.0, x.data(), y.data(), 2, 9);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == (i % 2 == 0 ? 7.0 : 5.0));
}

TEST_CASE("active table can be switched and restored") {
    const kernels::KernelTable& before = kernels::active();
    kernels::set_active(kernels::scalar_table());
    CHECK(kernels::active().name == kernels::scalar_table().name);
    kernels::set_active(before);
    CHECK(kernels::active().name == before.name);
}

TEST_CASE("gemm matches a plain triple loop in both tables") {
    std::mt19937_64 rng(12);
    std::vector<const kernels::KernelTable*> tables{&kernels::scalar_table()};
    if (kernels::avx2_table() != nullptr) tables.push_back(kernels::avx2_table());
    struct Dims { std::size_t m, n, k; };
    for (Dims d : {Dims{1, 1, 1}, Dims{3, 5, 2}, Dims{4, 8, 7}, Dims{9, 17, 300}, Dims{13, 3, 70}, Dims{300, 10, 9}}) {
        for (bool transposed : {false, true}) {
            CAPTURE(d.m);
            CAPTURE(d.n);
            CAPTURE(d.k);
            CAPTURE(transposed);
            const auto a = testing::uniform(d.m * d.k, rng);
            const auto b = testing::uniform(d.k * d.n + 2 * d.k, rng);
            const auto c0 = testing::uniform(d.m * (d.n + 2), rng);
            const std::size_t rsa = transposed ? 1 : d.k, csa = transposed ? d.m : 1;
            const std::size_t ldb = d.n + 2, ldc = d.n + 2;
            std::vector<double> expect = c0;
            for (std::size_t i = 0; i < d.m; ++i)
                for (std::size_t j = 0; j < d.n; ++j) {
                    double s = 0.0;
                    for (std::size_t p = 0; p < d.k; ++p) s += a[i * rsa + p * csa] * b[p * ldb + j];
                    expect[i * ldc + j] += s;
                }
            for (const auto* t : tables) {
                std::vector<double> c = c0;
                t->gemm(d.m, d.n, d.k, a.data(), rsa, csa, b.data(), ldb, c.data(), ldc);
                for (std::size_t i = 0; i < c.size(); ++i) CHECK(close(c[i], expect[i], 1e-12 * d.k));
            }
        }
    }
}
