#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <random>

#include "cpunet/cpm.hpp"
#include "cpunet/errors.hpp"
#include "cpunet/gradcheck.hpp"
#include "support.hpp"

using namespace cpunet;

namespace {

cpm::GaussianBank bank_of(std::size_t k, std::size_t d, std::mt19937_64& rng, bool variable = false) {
    auto mu = testing::uniform(k * d, rng, -2.0, 2.0);
    auto sigma = testing::uniform(k * d, rng, 0.2, 2.0);
    if (variable) return {Tensor::variable({k, d}, mu), Tensor::variable({k, d}, sigma)};
    return {Tensor::constant({k, d}, mu), Tensor::constant({k, d}, sigma)};
}

// Chebyshev distance from every pixel to the nearest contour pixel, by scan.
std::vector<std::uint8_t> band_by_scan(const std::vector<std::uint8_t>& mask, std::size_t h, std::size_t w,
                                       std::size_t band) {
    std::vector<std::pair<long, long>> contour;
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            if (!mask[r * w + c]) continue;
            bool edge = false;
            const long dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
            for (int n = 0; n < 4; ++n) {
                const long rr = static_cast<long>(r) + dr[n], cc = static_cast<long>(c) + dc[n];
                if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
                if (!mask[rr * w + cc]) edge = true;
            }
            if (edge) contour.emplace_back(r, c);
        }
    std::vector<std::uint8_t> out(h * w, 0);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
            for (const auto& [cr, cc] : contour) {
                const long d = std::max(std::labs(cr - static_cast<long>(r)), std::labs(cc - static_cast<long>(c)));
                if (d <= static_cast<long>(band)) {
                    out[r * w + c] = 1;
                    break;
                }
            }
    return out;
}

}  // namespace

TEST_CASE("kl of identical banks is zero") {
    std::mt19937_64 rng(1);
    const auto a = bank_of(4, 8, rng);
    CHECK(std::abs(cpm::kl_align(a, a).item()) <= 1e-12);
}

TEST_CASE("kl closed-form spot values") {
    CHECK(cpm::kl_coordinate(0.0, 1.0, 1.0, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::abs(cpm::kl_coordinate(0.0, 2.0, 0.0, 1.0) - (2.0 - 0.5 - std::log(2.0))) <= 1e-9);
    const cpm::GaussianBank a{Tensor::full({2, 3}, 0.0), Tensor::full({2, 3}, 1.0)};
    const cpm::GaussianBank b{Tensor::full({2, 3}, 1.0), Tensor::full({2, 3}, 1.0)};
    CHECK(cpm::kl_align(a, b).item() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("kl is non-negative on random banks") {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 1000; ++i) {
        const auto a = bank_of(3, 4, rng);
        const auto b = bank_of(3, 4, rng);
        CHECK(cpm::kl_align(a, b).item() >= 0.0);
    }
}

TEST_CASE("kl stays non-negative on nearly identical banks") {
    std::mt19937_64 rng(21);
    for (int i = 0; i < 1000; ++i) {
        const double mu = testing::uniform(1, rng)[0], sigma = 0.5 + testing::uniform(1, rng, 0.0, 1.0)[0];
        const double eps = 1e-9 * testing::uniform(1, rng)[0];
        const double kl = cpm::kl_coordinate(mu, sigma, mu, sigma * (1.0 + eps));
        CHECK(kl >= 0.0);
        // Second-order expansion: KL ~ eps^2 for a relative scale change eps.
        CHECK(kl <= 2.0 * eps * eps + 1e-30);
    }
}

TEST_CASE("kl agrees with a Monte-Carlo estimate") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z;
    for (int pair = 0; pair < 2; ++pair) {
        const double ma = 0.3 * pair, sa = 1.2, mb = -0.4, sb = 0.9 + 0.3 * pair;
        double acc = 0.0;
        const int n = 200000;
        for (int i = 0; i < n; ++i) {
            const double x = ma + sa * z(rng);
            const double la = -std::log(sa) - 0.5 * (x - ma) * (x - ma) / (sa * sa);
            const double lb = -std::log(sb) - 0.5 * (x - mb) * (x - mb) / (sb * sb);
            acc += la - lb;
        }
        const double exact = cpm::kl_coordinate(ma, sa, mb, sb);
        CHECK(std::abs(acc / n - exact) <= 0.03 * exact);
    }
}

TEST_CASE("kl stops the target gradient unless asked") {
    std::mt19937_64 rng(4);
    auto a = bank_of(2, 3, rng, true);
    auto b = bank_of(2, 3, rng, true);
    backward(cpm::kl_align(a, b));
    for (double g : b.mu.grad()) CHECK(g == 0.0);
    bool any = false;
    for (double g : a.mu.grad()) any = any || g != 0.0;
    CHECK(any);
    backward(cpm::kl_align(a, b, true));
    any = false;
    for (double g : b.sigma.grad()) any = any || g != 0.0;
    CHECK(any);
}

TEST_CASE("kl gradients pass the finite-difference check") {
    std::mt19937_64 rng(5);
    auto a = bank_of(2, 3, rng, true);
    auto b = bank_of(2, 3, rng, true);
    const auto r = gradient_check([&] { return cpm::kl_align(a, b, true); },
                                  {{"mu_a", a.mu}, {"sigma_a", a.sigma}, {"mu_b", b.mu}, {"sigma_b", b.sigma}});
    CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("bank validation rejects non-positive sigma") {
    const cpm::GaussianBank bad{Tensor::full({2, 2}, 0.0), Tensor::constant({2, 2}, {1.0, 0.0, 1.0, 1.0})};
    CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("zero extractor gives zero means and softplus(0) scales") {
    std::mt19937_64 rng(6);
    ParameterStore store;
    cpm::ContourExtractor ex(store, "ex", {3, 8, 4, 4, 5}, rng);
    for (Parameter* p : ex.parameters()) std::fill(p->tensor.mutable_values().begin(), p->tensor.mutable_values().end(), 0.0);
    const auto bank = ex.forward(Tensor::zeros({3, 32, 32}));
    CHECK(bank.mu.shape() == Shape{4, 5});
    for (double v : bank.mu.values()) CHECK(v == 0.0);
    for (double v : bank.sigma.values()) CHECK(v == doctest::Approx(std::log(2.0) + 1e-6).epsilon(1e-12));
}

TEST_CASE("extractor scales are positive and inputs below the minimum are rejected") {
    std::mt19937_64 rng(7);
    ParameterStore store;
    cpm::ContourExtractor ex(store, "ex", {2, 8, 4, 3, 4}, rng);
    const auto bank = ex.forward(testing::random_constant({2, 32, 32}, rng, -50.0, 50.0));
    for (double v : bank.sigma.values()) CHECK(v > 0.0);
    CHECK_THROWS_AS(ex.forward(Tensor::zeros({2, 1, 8})), ConfigError);
}

TEST_CASE("extractor gradients pass the finite-difference check") {
    std::mt19937_64 rng(8);
    ParameterStore store;
    cpm::ContourExtractor ex(store, "ex", {2, 4, 2, 2, 3}, rng);
    Tensor x = testing::random_variable({2, 8, 8}, rng);
    std::vector<NamedTensor> inputs{{"x", x}};
    for (Parameter* p : ex.parameters()) inputs.push_back({p->name, p->tensor});
    const auto r = gradient_check(
        [&] {
            const auto b = ex.forward(x);
            return add(testing::probe(b.mu, 1), testing::probe(b.sigma, 2));
        },
        inputs);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("omega starts as a uniform mixture") {
    ParameterStore store;
    cpm::StageOmega omega(store, "omega", 6, 4);
    CHECK(omega.weights().shape() == Shape{6, 4});
    for (double v : omega.weights().values()) CHECK(v == 0.25);
}

TEST_CASE("tiny sigma makes the sample deterministic") {
    std::mt19937_64 rng(9);
    const std::size_t k = 3, d = 5;
    const auto mu = testing::uniform(k * d, rng);
    const cpm::GaussianBank bank{Tensor::constant({k, d}, mu), Tensor::full({k, d}, 1e-6)};
    const Tensor omega = testing::random_constant({4, k}, rng);
    const Tensor g = cpm::reparam_sample(bank, omega, rng);
    for (std::size_t t = 0; t < 4; ++t) {
        double want = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            double m = 0.0;
            for (std::size_t j = 0; j < d; ++j) m += mu[c * d + j];
            want += omega.at(t * k + c) * m / d;
        }
        CHECK(std::abs(g.at(t) - want) <= 1e-4);
    }
}

TEST_CASE("zero omega annihilates the sample") {
    std::mt19937_64 rng(10);
    const auto bank = bank_of(3, 4, rng);
    const Tensor g = cpm::reparam_sample(bank, Tensor::zeros({5, 3}), rng);
    CHECK(g.shape() == Shape{5, 1});
    for (double v : g.values()) CHECK(v == 0.0);
}

TEST_CASE("shared noise reuses one draw across components") {
    std::mt19937_64 rng(11);
    const Tensor z = cpm::draw_noise(3, 4, cpm::NoiseMode::shared, rng);
    for (std::size_t k = 1; k < 3; ++k)
        for (std::size_t j = 0; j < 4; ++j) CHECK(z.at(k * 4 + j) == z.at(j));
}

TEST_CASE("sample moments match the independent-noise analysis") {
    std::mt19937_64 rng(12);
    const std::size_t k = 3, d = 4, t = 2, draws = 20000;
    const auto bank = bank_of(k, d, rng);
    const Tensor omega = testing::random_constant({t, k}, rng);
    std::vector<double> sum(t, 0.0), sq(t, 0.0);
    for (std::size_t i = 0; i < draws; ++i) {
        const Tensor g = cpm::reparam_sample(bank, omega, rng);
        for (std::size_t r = 0; r < t; ++r) {
            sum[r] += g.at(r);
            sq[r] += g.at(r) * g.at(r);
        }
    }
    for (std::size_t r = 0; r < t; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            double m = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                m += bank.mu.at(c * d + j);
                s2 += bank.sigma.at(c * d + j) * bank.sigma.at(c * d + j);
            }
            const double w = omega.at(r * k + c);
            mean += w * m / d;
            var += w * w * (s2 / d) / d;
        }
        const double emp_mean = sum[r] / draws;
        const double emp_var = sq[r] / draws - emp_mean * emp_mean;
        CHECK(std::abs(emp_mean - mean) <= 4.0 * std::sqrt(var / draws));
        CHECK(std::abs(emp_var - var) <= 0.1 * var);
    }
}

TEST_CASE("reparam gradients pass the finite-difference check") {
    std::mt19937_64 rng(13);
    auto bank = bank_of(3, 4, rng, true);
    Tensor omega = testing::random_variable({5, 3}, rng);
    const auto r = gradient_check(
        [&] {
            std::mt19937_64 local(77);
            return mean(cpm::reparam_sample(bank, omega, local));
        },
        {{"mu", bank.mu}, {"sigma", bank.sigma}, {"omega", omega}});
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("full mask has no contour and is degenerate") {
    const std::vector<double> img(36, 0.5);
    const std::vector<std::uint8_t> mask(36, 1);
    const auto res = cpm::mask_process(img, mask, 6, 6, 2);
    CHECK(res.degenerate);
    for (double v : res.image) CHECK(v == 0.0);
    const std::vector<std::uint8_t> empty(36, 0);
    CHECK(cpm::mask_process(img, empty, 6, 6, 2).degenerate);
}

TEST_CASE("single pixel keeps its 3x3 neighbourhood") {
    const std::size_t h = 7, w = 7;
    std::vector<double> img(h * w);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = 0.01 * (i + 1);
    std::vector<std::uint8_t> mask(h * w, 0);
    mask[3 * w + 3] = 1;
    const auto res = cpm::mask_process(img, mask, h, w, 1);
    CHECK_FALSE(res.degenerate);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            const bool inside = r >= 2 && r <= 4 && c >= 2 && c <= 4;
            CHECK(res.image[r * w + c] == (inside ? img[r * w + c] : 0.0));
        }
}

TEST_CASE("half-plane band matches the brute-force scan") {
    const std::size_t h = 8, w = 10;
    std::vector<std::uint8_t> mask(h * w, 0);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w / 2; ++c) mask[r * w + c] = 1;
    const std::vector<double> img(h * w, 1.0);
    const auto res = cpm::mask_process(img, mask, h, w, 1);
    CHECK(res.band == band_by_scan(mask, h, w, 1));
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) CHECK(static_cast<bool>(res.band[r * w + c]) == (c >= 3 && c <= 5));
}

TEST_CASE("band matches the brute-force scan on random masks") {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t h = 12, w = 9, band = 1 + trial % 3;
        const auto mask = testing::random_mask(h * w, rng, 0.3);
        const auto img = testing::uniform(h * w, rng, 0.0, 1.0);
        const auto res = cpm::mask_process(img, mask, h, w, band);
        const auto want = band_by_scan(mask, h, w, band);
        CHECK(res.band == want);
        for (std::size_t i = 0; i < img.size(); ++i) CHECK(res.image[i] == (want[i] ? img[i] : 0.0));
    }
}
