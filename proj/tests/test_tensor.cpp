#include <doctest.h>

#include <cmath>
#include <random>

#include "cpunet/errors.hpp"
#include "cpunet/gradcheck.hpp"
#include "cpunet/kernels.hpp"
#include "cpunet/tensor.hpp"
#include "support.hpp"

using namespace cpunet;

namespace {

// Brute-force cross-correlation with zero padding.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t stride, std::size_t pad) {
    const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t co = k.dim(0), ks = k.dim(2);
    const std::size_t oh = (h + 2 * pad - ks) / stride + 1, ow = (w + 2 * pad - ks) / stride + 1;
    std::vector<double> out(co * oh * ow, 0.0);
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t r = 0; r < oh; ++r)
            for (std::size_t c = 0; c < ow; ++c) {
                double acc = b.defined() ? b.at(o) : 0.0;
                for (std::size_t i = 0; i < ci; ++i)
                    for (std::size_t u = 0; u < ks; ++u)
                        for (std::size_t v = 0; v < ks; ++v) {
                            const long rr = static_cast<long>(r * stride + u) - static_cast<long>(pad);
                            const long cc = static_cast<long>(c * stride + v) - static_cast<long>(pad);
                            if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
                            acc += x.at((i * h + rr) * w + cc) * k.at(((o * ci + i) * ks + u) * ks + v);
                        }
                out[(o * oh + r) * ow + c] = acc;
            }
    return out;
}

}  // namespace

TEST_CASE("backward of sum gives ones") {
    Tensor p = Tensor::variable({3}, {1.0, -2.0, 5.0});
    backward(sum(p));
    for (double g : p.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of sum of squares") {
    Tensor p = Tensor::variable({2}, {1.0, 2.0});
    backward(sum(mul(p, p)));
    CHECK(p.grad()[0] == doctest::Approx(2.0));
    CHECK(p.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("disconnected leaf keeps a zero gradient") {
    Tensor p = Tensor::variable({2}, {1.0, 2.0});
    Tensor q = Tensor::variable({2}, {3.0, 4.0});
    backward(sum(p));
    for (double g : q.grad()) CHECK(g == 0.0);
}

TEST_CASE("leaf gradients accumulate and reset with zero_grad") {
    Tensor p = Tensor::variable({1}, {3.0});
    backward(scale(p, 2.0));
    backward(scale(p, 2.0));
    CHECK(p.grad()[0] == 4.0);
    p.zero_grad();
    CHECK(p.grad()[0] == 0.0);
}

TEST_CASE("tape replay gives identical gradients") {
    std::mt19937_64 rng(3);
    Tensor x = testing::random_variable({2, 6, 6}, rng);
    Tensor k = testing::random_variable({3, 2, 3, 3}, rng);
    auto run = [&] {
        x.zero_grad();
        k.zero_grad();
        backward(testing::probe(gelu(conv2d(x, k, Tensor(), 1, 1))));
        return std::vector<double>(k.grad().begin(), k.grad().end());
    };
    CHECK(run() == run());
}

TEST_CASE("no-grad mode records no graph") {
    Tensor p = Tensor::variable({2}, {1.0, 2.0});
    ad::NoGradGuard guard;
    Tensor y = mul(p, p);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("gelu uses the tanh approximation") {
    const double x = 0.7;
    const double expected = 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
    CHECK(gelu_value(x) == doctest::Approx(expected).epsilon(1e-15));
    CHECK(gelu_value(0.0) == 0.0);
}

TEST_CASE("softplus is positive") {
    for (double x : {-800.0, -40.0, -1.0, 0.0, 3.0, 800.0}) CHECK(softplus_value(x) > 0.0);
    CHECK(softplus_value(0.0) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("conv2d matches a brute-force loop") {
    std::mt19937_64 rng(5);
    for (std::size_t stride : {1u, 2u}) {
        for (std::size_t ks : {1u, 3u}) {
            Tensor x = testing::random_constant({3, 8, 6}, rng);
            Tensor k = testing::random_constant({4, 3, ks, ks}, rng);
            Tensor b = testing::random_constant({4}, rng);
            const std::size_t pad = ks / 2;
            const Tensor y = conv2d(x, k, b, stride, pad);
            const auto want = conv_oracle(x, k, b, stride, pad);
            REQUIRE(y.numel() == want.size());
            for (std::size_t i = 0; i < want.size(); ++i) CHECK(y.at(i) == doctest::Approx(want[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("conv2d rejects mismatched channels") {
    std::mt19937_64 rng(5);
    Tensor x = testing::random_constant({3, 8, 8}, rng);
    Tensor k = testing::random_constant({4, 2, 3, 3}, rng);
    CHECK_THROWS_AS(conv2d(x, k, Tensor(), 1, 1), DimensionError);
}

TEST_CASE("single conv2d layer passes the gradient check below 1e-6") {
    std::mt19937_64 rng(8);
    Tensor x = testing::random_variable({2, 7, 7}, rng);
    Tensor k = testing::random_variable({3, 2, 3, 3}, rng);
    Tensor b = testing::random_variable({3}, rng);
    for (std::size_t stride : {1u, 2u}) {
        const auto r = gradient_check([&] { return testing::probe(conv2d(x, k, b, stride, 1)); },
                                      {{"x", x}, {"kernel", k}, {"bias", b}});
        CHECK(r.max_rel_error < 1e-6);
    }
}

TEST_CASE("every primitive passes the gradient check below 1e-6") {
    std::mt19937_64 rng(21);
    Tensor a = testing::random_variable({2, 3, 4}, rng);
    Tensor b = testing::random_variable({2, 3, 4}, rng);
    Tensor c = testing::random_variable({2, 1, 1}, rng);
    Tensor m = testing::random_variable({3, 5}, rng);
    Tensor n = testing::random_variable({5, 2}, rng);
    Tensor wt = testing::random_variable({4, 5}, rng);
    Tensor bias = testing::random_variable({4}, rng);
    const std::vector<std::pair<const char*, std::function<Tensor()>>> programs = {
        {"add", [&] { return testing::probe(add(a, b)); }},
        {"sub", [&] { return testing::probe(sub(a, b)); }},
        {"mul", [&] { return testing::probe(mul(a, b)); }},
        {"broadcast_mul", [&] { return testing::probe(elementwise(ElementwiseOp::broadcast_mul, a, c)); }},
        {"broadcast_add", [&] { return testing::probe(add(a, c)); }},
        {"scale", [&] { return testing::probe(scale(a, -1.7)); }},
        {"add_scalar", [&] { return testing::probe(add_scalar(a, 0.3)); }},
        {"gelu", [&] { return testing::probe(gelu(a)); }},
        {"sigmoid", [&] { return testing::probe(sigmoid(a)); }},
        {"softplus", [&] { return testing::probe(softplus(a)); }},
        {"gap", [&] { return testing::probe(gap(a)); }},
        {"matmul", [&] { return testing::probe(matmul(m, n)); }},
        {"linear", [&] { return testing::probe(linear(m, wt, bias)); }},
        {"mean", [&] { return mean(mul(a, b)); }},
        {"mean_last_axis", [&] { return testing::probe(mean_last_axis(a)); }},
        {"reshape", [&] { return testing::probe(reshape(a, {6, 4})); }},
        {"broadcast_to", [&] { return testing::probe(broadcast_to(c, {2, 3, 4})); }},
        {"upsample", [&] { return testing::probe(upsample_nearest2x(a)); }},
    };
    for (const auto& [name, program] : programs) {
        CAPTURE(name);
        const auto r = gradient_check(program, {{"a", a}, {"b", b}, {"c", c}, {"m", m}, {"n", n}, {"w", wt}, {"bias", bias}});
        CHECK(r.max_rel_error < 1e-6);
    }
}

TEST_CASE("relu gradient matches away from the kink") {
    Tensor a = Tensor::variable({4}, {-1.0, -0.2, 0.4, 2.0});
    const auto r = gradient_check([&] { return testing::probe(relu(a)); }, {{"a", a}});
    CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("constant program has zero analytic and numeric gradients") {
    Tensor p = Tensor::variable({3}, {1.0, 2.0, 3.0});
    const auto r = gradient_check([&] { return sum(Tensor::constant({1}, {4.0})); }, {{"p", p}});
    CHECK(r.max_rel_error == 0.0);
}

TEST_CASE("gradient check names a tensor with non-finite values") {
    Tensor p = Tensor::variable({2}, {1.0, std::nan("")});
    CHECK_THROWS_AS(gradient_check([&] { return sum(p); }, {{"weights", p}}), NumericalError);
    try {
        gradient_check([&] { return sum(p); }, {{"weights", p}});
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("weights") != std::string::npos);
    }
}

TEST_CASE("forward and backward agree across kernel tables") {
    const kernels::KernelTable* simd = kernels::avx2_table();
    if (simd == nullptr) return;
    const kernels::KernelTable& before = kernels::active();
    std::mt19937_64 rng(17);
    Tensor x = testing::random_variable({4, 16, 16}, rng);
    Tensor k = testing::random_variable({6, 4, 3, 3}, rng);
    Tensor w = testing::random_variable({32, 64}, rng);
    auto run = [&](const kernels::KernelTable& table) {
        kernels::set_active(table);
        x.zero_grad();
        k.zero_grad();
        w.zero_grad();
        Tensor y = conv2d(x, k, Tensor(), 2, 1);
        Tensor z = linear(reshape(y, {6, 64}), w, Tensor());
        backward(testing::probe(z));
        std::vector<double> out(z.values().begin(), z.values().end());
        out.insert(out.end(), x.grad().begin(), x.grad().end());
        out.insert(out.end(), k.grad().begin(), k.grad().end());
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        return out;
    };
    const auto a = run(kernels::scalar_table());
    const auto b = run(*simd);
    kernels::set_active(before);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-10));
}

TEST_CASE("parameter store rejects duplicate names") {
    ParameterStore store;
    store.add("w", {2});
    CHECK_THROWS_AS(store.add("w", {3}), ConfigError);
    std::mt19937_64 rng(1);
    Parameter& p = store.add_kaiming("k", {8, 4}, 4, rng);
    const double bound = std::sqrt(6.0 / 4.0);
    for (double v : p.tensor.values()) CHECK(std::abs(v) <= bound);
    CHECK(store.total_count() == 34);
}
