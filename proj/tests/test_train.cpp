#include <doctest.h>

#include <cmath>
#include <random>

#include "cpunet/errors.hpp"
#include "cpunet/synth.hpp"
#include "cpunet/train.hpp"
#include "support.hpp"

using namespace cpunet;

namespace {

CpUnetConfig tiny_model() {
    CpUnetConfig c;
    c.stages = 2;
    c.base_channels = 4;
    c.height = c.width = 16;
    c.components = 2;
    c.feature_dim = 3;
    c.extractor_width = 4;
    c.groups = 2;
    c.band = 1;
    return c;
}

synth::SynthSpec tiny_data(std::size_t count) {
    synth::SynthSpec s;
    s.count = count;
    s.height = s.width = 16;
    s.band = 1;
    s.min_area_fraction = 0.05;
    s.max_area_fraction = 0.6;
    return s;
}

train::TrainConfig quick(std::size_t steps) {
    train::TrainConfig t;
    t.batch_size = 2;
    t.max_steps = steps;
    t.eval_every = steps;
    return t;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
    CHECK(train::cosine_lr(0, 100, 0.1) == 0.1);
    CHECK(std::abs(train::cosine_lr(100, 100, 0.1)) < 1e-18);
    CHECK(train::cosine_lr(50, 100, 0.1) == doctest::Approx(0.05).epsilon(1e-15));
    CHECK_THROWS_AS(train::cosine_lr(101, 100, 0.1), ContractError);
    double prev = 1.0;
    for (std::size_t s = 0; s <= 37; ++s) {
        const double lr = train::cosine_lr(s, 37, 1.0);
        CHECK(lr <= prev);
        prev = lr;
    }
}

TEST_CASE("sgd examples") {
    ParameterStore store;
    Parameter& p = store.add_constant("p", {1}, 1.0);
    train::TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;

    train::sgd_step(store, 0.1, cfg);
    CHECK(p.tensor.at(0) == 1.0);

    p.tensor.mutable_grad()[0] = 1.0;
    train::sgd_step(store, 0.1, cfg);
    CHECK(p.tensor.at(0) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(p.tensor.grad()[0] == 0.0);

    // Fresh parameter so the momentum buffer starts at zero.
    Parameter& q = store.add_constant("q", {1}, 1.0);
    cfg.momentum = 0.9;
    double before = q.tensor.at(0);
    q.tensor.mutable_grad()[0] = 1.0;
    train::sgd_step(store, 0.1, cfg);
    CHECK(before - q.tensor.at(0) == doctest::Approx(0.1).epsilon(1e-12));
    before = q.tensor.at(0);
    q.tensor.mutable_grad()[0] = 1.0;
    train::sgd_step(store, 0.1, cfg);
    CHECK(before - q.tensor.at(0) == doctest::Approx(0.19).epsilon(1e-12));
}

TEST_CASE("weight decay alone shrinks the parameter norm every step") {
    ParameterStore store;
    std::mt19937_64 rng(1);
    store.add_kaiming("w", {6, 6}, 6, rng);
    train::TrainConfig cfg;
    auto norm = [&] {
        double s = 0.0;
        for (double v : store[0].tensor.values()) s += v * v;
        return s;
    };
    double prev = norm();
    for (int i = 0; i < 20; ++i) {
        train::sgd_step(store, 0.01, cfg);
        const double now = norm();
        CHECK(now < prev);
        prev = now;
    }
}

TEST_CASE("non-finite gradient aborts naming the parameter, touching nothing") {
    ParameterStore store;
    Parameter& a = store.add_constant("alpha", {2}, 1.0);
    Parameter& b = store.add_constant("beta", {2}, 1.0);
    a.tensor.mutable_grad()[0] = 1.0;
    b.tensor.mutable_grad()[1] = std::nan("");
    try {
        train::sgd_step(store, 0.1, train::TrainConfig{});
        FAIL("expected an abort");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("beta") != std::string::npos);
    }
    CHECK(a.tensor.at(0) == 1.0);
}

TEST_CASE("split is 80/20 and seed-fixed") {
    const auto s = train::split_dataset(16, 0.2, 3);
    CHECK(s.val.size() == 3);
    CHECK(s.train.size() == 13);
    const auto t = train::split_dataset(16, 0.2, 3);
    CHECK(s.val == t.val);
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.val.begin(), s.val.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 16; ++i) CHECK(all[i] == i);
}

TEST_CASE("zero learning rate freezes parameters and losses") {
    const auto data = synth::generate_dataset(tiny_data(4), 1);
    // CPM off: its sampling noise would vary the loss even when frozen.
    CpUnetConfig mc = tiny_model();
    mc.enable_cpm = false;
    CpUnet model(mc);
    const auto before = train::snapshot(model.parameters());
    auto cfg = quick(4);
    cfg.lr0 = 0.0;
    cfg.weight_decay = 0.0;
    cfg.val_fraction = 0.0;
    cfg.batch_size = 4;
    const auto log = train::train(model, data, cfg);
    CHECK(train::snapshot(model.parameters()) == before);
    // Full-batch steps see the same samples in shuffled order.
    for (const auto& r : log.steps) {
        CHECK(r.loss.total == doctest::Approx(log.steps.front().loss.total).epsilon(1e-13));
    }
}

TEST_CASE("identical seeds give bit-identical logs") {
    const auto data = synth::generate_dataset(tiny_data(5), 2);
    auto run = [&] {
        CpUnet model(tiny_model());
        std::vector<std::string> lines;
        train::TrainHooks hooks;
        hooks.on_step = [&](const train::StepRecord& r) { lines.push_back(train::format_step(r)); };
        hooks.on_eval = [&](const train::EvalRecord& r) { lines.push_back(train::format_eval(r)); };
        train::train(model, data, quick(6), hooks);
        return lines;
    };
    const auto a = run();
    CHECK(a.size() == 7);
    CHECK(a == run());
}

TEST_CASE("log lines are tab separated") {
    train::StepRecord r{3, 0.5, {0.25, 0.125, 0.0, 0.375}};
    CHECK(train::format_step(r) == "3\t0.5\t0.25\t0.125\t0\t0.375");
    CHECK(train::format_eval({7, 0.5, 0.75}) == "eval\t7\t0.5\t0.75");
}

TEST_CASE("best snapshot and resumed numbering") {
    const auto data = synth::generate_dataset(tiny_data(5), 3);
    CpUnet model(tiny_model());
    auto cfg = quick(4);
    cfg.eval_every = 2;
    const auto log = train::train(model, data, cfg);
    CHECK(log.evals.size() == 2);
    CHECK(log.final_step == 4);
    CHECK(log.best.size() == model.parameters().size());
    train::TrainHooks hooks;
    hooks.start_step = log.final_step;
    const auto resumed = train::train(model, data, cfg, hooks);
    CHECK(resumed.steps.front().step == 4);
    CHECK(resumed.steps.back().step == 7);
}

TEST_CASE("synthetic data is deterministic per seed") {
    const auto spec = tiny_data(3);
    const auto a = synth::generate_dataset(spec, 9);
    const auto b = synth::generate_dataset(spec, 9);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a[i].image == b[i].image);
        CHECK(a[i].mask == b[i].mask);
    }
    CHECK(synth::generate_sample(spec, 9, 2).image == a[2].image);
    CHECK(synth::generate_dataset(spec, 10)[0].image != a[0].image);
}

TEST_CASE("noiseless sharp sample matches its thresholded image") {
    synth::SynthSpec spec;
    spec.blur_sigma_lo = spec.blur_sigma_hi = 0.0;
    spec.speckle_strength = 0.0;
    spec.overlap_artifacts = false;
    for (std::size_t i = 0; i < 5; ++i) {
        const auto s = synth::generate_sample(spec, 4, i);
        for (std::size_t p = 0; p < s.mask.size(); ++p) CHECK(s.mask[p] == (s.image[p] < 0.4 ? 1 : 0));
    }
}

TEST_CASE("lesions respect the area bounds and the border margin") {
    synth::SynthSpec spec;
    for (std::size_t i = 0; i < 1000; ++i) {
        const auto s = synth::generate_sample(spec, 5, i);
        std::size_t area = 0;
        for (std::size_t r = 0; r < s.height; ++r)
            for (std::size_t c = 0; c < s.width; ++c) {
                if (!s.mask[r * s.width + c]) continue;
                ++area;
                const std::size_t m = spec.band + 1;
                CHECK((r >= m && c >= m && r + m < s.height && c + m < s.width));
            }
        const double frac = static_cast<double>(area) / (s.height * s.width);
        CHECK(frac >= spec.min_area_fraction);
        CHECK(frac <= spec.max_area_fraction);
        for (double v : s.image) CHECK(std::round(v * 255.0) == v * 255.0);
    }
}

TEST_CASE("infeasible geometry is a data error") {
    synth::SynthSpec spec;
    spec.min_area_fraction = 0.9;
    spec.max_area_fraction = 0.95;
    CHECK_THROWS_AS(synth::generate_sample(spec, 1, 0), DataError);
}

TEST_CASE("shape family names round-trip") {
    for (auto f : {synth::ShapeFamily::ellipse, synth::ShapeFamily::perturbed_ellipse, synth::ShapeFamily::crescent,
                   synth::ShapeFamily::mixed}) {
        CHECK(synth::parse_shape_family(synth::to_string(f)) == f);
    }
    CHECK_THROWS_AS(synth::parse_shape_family("blob"), ConfigError);
}
