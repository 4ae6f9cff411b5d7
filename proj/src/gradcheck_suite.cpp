#include "cpunet/gradcheck_suite.hpp"

#include <random>

#include "cpunet/cpm.hpp"
#include "cpunet/gf.hpp"
#include "cpunet/losses.hpp"
#include "cpunet/mgcsd.hpp"
#include "cpunet/synth.hpp"

namespace cpunet {

namespace {

Tensor random_variable(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor::variable(std::move(shape), std::move(v));
}

Tensor random_constant(Shape shape, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> v(numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor::constant(std::move(shape), std::move(v));
}

// Scalar probe <t, r> with a fixed random r, so every output coordinate
// contributes to the checked gradient.
Tensor probe(const Tensor& t, const Tensor& r) { return sum(mul(t, r)); }

std::vector<NamedTensor> with_prefix(const ParameterStore& store, const std::string& prefix) {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < store.size(); ++i) {
        if (store[i].name.rfind(prefix, 0) == 0) out.push_back({store[i].name, store[i].tensor});
    }
    return out;
}

// With a stop-gradient KL target the target extractor moves the loss but
// receives no adjoint, so it is excluded from the end-to-end comparison.
std::vector<NamedTensor> end_to_end_params(const ParameterStore& store, bool target_trains) {
    std::vector<NamedTensor> out;
    for (const NamedTensor& p : with_prefix(store, "")) {
        if (!target_trains && p.name.rfind("cpm.extractor_b.", 0) == 0) continue;
        out.push_back(p);
    }
    return out;
}

// Identity forward, doubled adjoint.
Tensor faulty_identity(const Tensor& x) {
    std::vector<double> v(x.values().begin(), x.values().end());
    return make_op(x.shape(), std::move(v), {x}, [](ad::Node& self) {
        double* g = ad::input_grad(self, 0);
        if (!g) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += 2.0 * self.grad[i];
    });
}

}  // namespace

std::vector<BlockReport> run_gradcheck_suite(const CpUnetConfig& config, const GradcheckSuiteOptions& options) {
    CpUnet model(config);
    std::mt19937_64 rng(config.seed + 17);
    std::vector<BlockReport> reports;
    auto record = [&](const std::string& name, const std::function<Tensor()>& program,
                      const std::vector<NamedTensor>& inputs) {
        BlockReport r;
        r.block = name;
        r.result = gradient_check(program, inputs, options.check);
        r.passed = r.result.max_rel_error < options.threshold;
        reports.push_back(std::move(r));
    };
    const std::size_t h = config.height, w = config.width;

    {
        Tensor x = random_variable({3, 6, 6}, rng);
        Tensor k = random_variable({4, 3, 3, 3}, rng);
        Tensor b = random_variable({4}, rng);
        Tensor r1 = random_constant({4, 6, 6}, rng);
        Tensor r2 = random_constant({4, 3, 3}, rng);
        record("conv2d",
               [=] { return add(probe(conv2d(x, k, b, 1, 1), r1), probe(conv2d(x, k, b, 2, 1), r2)); },
               {{"x", x}, {"kernel", k}, {"bias", b}});
    }

    if (const mgcsd::MgCsdStage* stage = model.mgcsd_stage(0)) {
        Tensor x = random_variable({config.base_channels, h, w}, rng);
        Tensor r = random_constant({config.channels_at(1), h / 2, w / 2}, rng);
        auto inputs = with_prefix(model.parameters(), "enc.stage1.");
        inputs.push_back({"x", x});
        record("mgcsd", [=] { return probe(stage->forward(x), r); }, inputs);
    }

    if (model.extractor_a() != nullptr) {
        const std::size_t K = config.components, d = config.feature_dim;
        Tensor rmu = random_constant({K, d}, rng);
        Tensor rsig = random_constant({K, d}, rng);
        const std::size_t deep = config.stages;
        Tensor xa = random_variable({config.channels_at(deep), h >> deep, w >> deep}, rng);
        const cpm::ContourExtractor* ea = model.extractor_a();
        auto inputs_a = with_prefix(model.parameters(), "cpm.extractor_a.");
        inputs_a.push_back({"x", xa});
        record("cpm.extractor_a",
               [=] {
                   cpm::GaussianBank b = ea->forward(xa);
                   return add(probe(b.mu, rmu), probe(b.sigma, rsig));
               },
               inputs_a);

        Tensor xb = random_variable({1, h, w}, rng, 0.0, 1.0);
        const cpm::ContourExtractor* eb = model.extractor_b();
        auto inputs_b = with_prefix(model.parameters(), "cpm.extractor_b.");
        inputs_b.push_back({"y", xb});
        record("cpm.extractor_b",
               [=] {
                   cpm::GaussianBank b = eb->forward(xb);
                   return add(probe(b.mu, rmu), probe(b.sigma, rsig));
               },
               inputs_b);

        Tensor mu = random_variable({K, d}, rng);
        Tensor sigma = random_variable({K, d}, rng, 0.2, 1.5);
        Tensor omega = random_variable({config.base_channels, K}, rng);
        Tensor rg = random_constant({config.base_channels, 1}, rng);
        const std::uint64_t noise_seed = config.seed + 99;
        const cpm::NoiseMode mode = config.noise_mode;
        record("cpm.reparam",
               [=] {
                   std::mt19937_64 noise(noise_seed);
                   return probe(cpm::reparam_sample({mu, sigma}, omega, noise, mode), rg);
               },
               {{"mu", mu}, {"sigma", sigma}, {"omega", omega}});

        Tensor mu_b = random_variable({K, d}, rng);
        Tensor sigma_b = random_variable({K, d}, rng, 0.2, 1.5);
        record("cpm.kl", [=] { return cpm::kl_align({mu, sigma}, {mu_b, sigma_b}, true); },
               {{"mu_a", mu}, {"sigma_a", sigma}, {"mu_b", mu_b}, {"sigma_b", sigma_b}});
    }

    if (const gf::GfLayer* layer = model.gf_layer(0)) {
        const Shape s{config.base_channels, h, w};
        Tensor up = random_variable(s, rng), skip = random_variable(s, rng), contour = random_variable(s, rng);
        Tensor r = random_constant(s, rng);
        auto inputs = with_prefix(model.parameters(), "dec.stage0.gf.");
        inputs.push_back({"F_up", up});
        inputs.push_back({"F_skip", skip});
        inputs.push_back({"F_contour", contour});
        record("gf", [=] { return probe(layer->gate(gf::fuse_inputs({up, skip, contour})), r); }, inputs);
    }

    {
        const Parameter& hw = *model.parameters().find("head.weight");
        const Parameter& hb = *model.parameters().find("head.bias");
        Tensor x = random_variable({config.base_channels, h, w}, rng);
        Tensor r = random_constant({1, h, w}, rng);
        Tensor hwt = hw.tensor, hbt = hb.tensor;
        record("head", [=] { return probe(sigmoid(conv2d(x, hwt, hbt, 1, 0)), r); },
               {{"head.weight", hwt}, {"head.bias", hbt}, {"x", x}});
    }

    {
        Tensor p = random_variable({1, h, w}, rng, 0.05, 0.95);
        std::vector<double> t(h * w);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = (rng() % 2) ? 1.0 : 0.0;
        record("bce", [=] { return loss::bce_loss(p, t); }, {{"pred", p}});
        record("dice", [=] { return loss::dice_loss(p, t); }, {{"pred", p}});
    }

    {
        synth::SynthSpec spec;
        spec.height = h;
        spec.width = w;
        spec.band = std::min<std::size_t>(config.band, 1);
        spec.min_area_fraction = 0.02;
        spec.max_area_fraction = 0.6;
        const synth::Sample sample = synth::generate_sample(spec, config.seed, 0);
        const std::vector<double> target = sample.mask_as_double();
        const CpUnet* m = &model;
        const std::uint64_t noise_seed = config.seed + 5;
        const bool fault = options.inject_fault;
        record("end_to_end",
               [=] {
                   std::mt19937_64 noise(noise_seed);
                   TrainingTarget tt{sample.image, sample.mask};
                   ForwardOutput out = m->forward(Tensor::constant({1, h, w}, sample.image), &tt, noise);
                   Tensor total = loss::total_loss(out.probs, target, out.kl).total;
                   return fault ? faulty_identity(total) : total;
               },
               end_to_end_params(model.parameters(), config.train_target_branch));
    }
    return reports;
}

}  // namespace cpunet
