#include <doctest.h>

#include <cmath>
#include <random>

#include "cpunet/errors.hpp"
#include "cpunet/gradcheck.hpp"
#include "cpunet/losses.hpp"
#include "support.hpp"

using namespace cpunet;

namespace {

std::vector<double> as_double(const std::vector<std::uint8_t>& m) { return {m.begin(), m.end()}; }

}  // namespace

TEST_CASE("bce closed-form values") {
    const std::vector<double> t = {0, 1, 1, 0};
    CHECK(loss::bce_loss(Tensor::full({4}, 0.5), t).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(loss::bce_loss(Tensor::constant({4}, t), t).item() == doctest::Approx(-std::log(1.0 - 1e-7)).epsilon(1e-9));
    const std::vector<double> flipped = {1, 0, 0, 1};
    CHECK(loss::bce_loss(Tensor::constant({4}, flipped), t).item() == doctest::Approx(-std::log(1e-7)).epsilon(1e-9));
}

TEST_CASE("clamped entries get no gradient") {
    Tensor p = Tensor::variable({2}, {0.0, 0.4});
    backward(loss::bce_loss(p, std::vector<double>{1.0, 1.0}));
    CHECK(p.grad()[0] == 0.0);
    CHECK(p.grad()[1] == doctest::Approx(-1.0 / (2 * 0.4)));
}

TEST_CASE("dice loss values") {
    const std::vector<double> ones(10, 1.0), zeros(10, 0.0);
    CHECK(loss::dice_loss(Tensor::constant({10}, ones), ones).item() == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(loss::dice_loss(Tensor::zeros({10}), ones).item() == doctest::Approx(1.0 - 1.0 / 11.0));
    CHECK(loss::dice_loss(Tensor::zeros({10}), zeros).item() == 0.0);
}

TEST_CASE("loss gradients pass the finite-difference check below 1e-5") {
    std::mt19937_64 rng(1);
    Tensor p = testing::random_variable({3, 5}, rng, 0.05, 0.95);
    const auto t = as_double(testing::random_mask(15, rng));
    CHECK(gradient_check([&] { return loss::bce_loss(p, t); }, {{"p", p}}).max_rel_error < 1e-5);
    CHECK(gradient_check([&] { return loss::dice_loss(p, t); }, {{"p", p}}).max_rel_error < 1e-5);
}

TEST_CASE("total is the unit-weight sum of its parts") {
    const auto b = loss::combine(0.2, 0.3, 0.1);
    CHECK(b.total == doctest::Approx(0.6).epsilon(1e-15));
    std::mt19937_64 rng(2);
    const Tensor p = testing::random_constant({16}, rng, 0.1, 0.9);
    const auto t = as_double(testing::random_mask(16, rng));
    const Tensor kl = Tensor::constant({1}, {0.25});
    const auto terms = loss::total_loss(p, t, kl);
    const double bce = loss::bce_loss(p, t).item(), dice = loss::dice_loss(p, t).item();
    CHECK(terms.breakdown.bce == bce);
    CHECK(terms.breakdown.dice == dice);
    CHECK(terms.breakdown.kl == 0.25);
    CHECK(terms.breakdown.total == bce + dice + 0.25);
    CHECK(terms.total.item() == doctest::Approx(terms.breakdown.total).epsilon(1e-15));
    const auto perfect = loss::total_loss(Tensor::constant({16}, t), t, Tensor());
    CHECK(perfect.breakdown.total < 1e-6);
}

TEST_CASE("non-finite component aborts with the breakdown") {
    try {
        loss::combine(0.1, std::nan(""), 0.0);
        FAIL("expected an abort");
    } catch (const loss::TrainingAbort& e) {
        CHECK(e.breakdown().bce == 0.1);
        CHECK(e.exit_code() == 4);
    }
}

TEST_CASE("loss shapes must agree") {
    CHECK_THROWS_AS(loss::bce_loss(Tensor::zeros({4}), std::vector<double>(5, 0.0)), DimensionError);
}

TEST_CASE("metric special cases") {
    const std::vector<std::uint8_t> a = {1, 1, 0, 0}, b = {0, 0, 1, 1}, e = {0, 0, 0, 0};
    auto m = loss::iou_dice_metrics(a, a);
    CHECK(m.iou == 1.0);
    CHECK(m.dice == 1.0);
    m = loss::iou_dice_metrics(a, b);
    CHECK(m.iou == 0.0);
    CHECK(m.dice == 0.0);
    m = loss::iou_dice_metrics(e, e);
    CHECK(m.iou == 1.0);
    CHECK(m.dice == 1.0);
    const std::vector<std::uint8_t> half = {1, 0, 0, 0}, whole = {1, 1, 0, 0};
    m = loss::iou_dice_metrics(half, whole);
    CHECK(m.iou == 0.5);
    CHECK(m.dice == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("dice and iou obey their identity on random masks") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 1000; ++i) {
        const auto p = testing::random_mask(64, rng, 0.4);
        const auto t = testing::random_mask(64, rng, 0.4);
        const auto m = loss::iou_dice_metrics(p, t);
        CHECK(m.dice == doctest::Approx(2 * m.iou / (1 + m.iou)).epsilon(1e-15));
        CHECK(m.iou <= m.dice);
        CHECK(m.dice <= 1.0);
    }
}

TEST_CASE("threshold keeps probabilities at one half") {
    const auto m = loss::threshold(std::vector<double>{0.49, 0.5, 0.51});
    CHECK(m == std::vector<std::uint8_t>{0, 1, 1});
}
