#include "cpunet/cpm.hpp"

#include <algorithm>
#include <cmath>

#include "cpunet/errors.hpp"

namespace cpunet::cpm {

void GaussianBank::validate() const {
    if (!mu.defined() || !sigma.defined()) throw ContractError("gaussian bank: undefined tensors");
    if (mu.rank() != 2 || mu.shape() != sigma.shape()) {
        throw_dimension("gaussian bank", "mu " + shape_str(mu.shape()) + " vs sigma " + shape_str(sigma.shape()));
    }
    if (mu.dim(0) == 0 || mu.dim(1) == 0) throw ContractError("gaussian bank: K and d must be >= 1");
    for (double s : sigma.values()) {
        if (!(s > 0.0)) throw ContractError("gaussian bank: non-positive sigma " + std::to_string(s));
    }
}

ContourExtractor::ContourExtractor(ParameterStore& store, const std::string& prefix, ExtractorConfig config,
                                   std::mt19937_64& rng)
    : config_(config) {
    if (config.blocks == 0 || config.width == 0 || config.components == 0 || config.feature_dim == 0) {
        throw ConfigError("contour extractor: blocks, width, K and d must be >= 1");
    }
    std::size_t in = config.in_channels;
    for (std::size_t b = 0; b < config.blocks; ++b) {
        const std::string base = prefix + ".block" + std::to_string(b + 1);
        conv_w_.push_back(&store.add_kaiming(base + ".weight", {config.width, in, 3, 3}, in * 9, rng));
        conv_b_.push_back(&store.add(base + ".bias", {config.width}));
        params_.push_back(conv_w_.back());
        params_.push_back(conv_b_.back());
        in = config.width;
    }
    const std::size_t out = config.components * config.feature_dim;
    mu_w_ = &store.add_kaiming(prefix + ".mu_head.weight", {out, config.width}, config.width, rng);
    mu_b_ = &store.add(prefix + ".mu_head.bias", {out});
    sigma_w_ = &store.add_kaiming(prefix + ".sigma_head.weight", {out, config.width}, config.width, rng);
    sigma_b_ = &store.add(prefix + ".sigma_head.bias", {out});
    for (Parameter* p : {mu_w_, mu_b_, sigma_w_, sigma_b_}) params_.push_back(p);
}

GaussianBank ContourExtractor::forward(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(0) != config_.in_channels) {
        throw_dimension("contour extractor", "expected [" + std::to_string(config_.in_channels) +
                                                 ",h,w], got " + shape_str(x.shape()));
    }
    if (x.dim(1) < min_spatial() || x.dim(2) < min_spatial()) {
        throw ConfigError("contour extractor: input " + shape_str(x.shape()) + " below minimum spatial size " +
                          std::to_string(min_spatial()));
    }
    Tensor h = x;
    for (std::size_t b = 0; b < conv_w_.size(); ++b) h = gelu(conv2d(h, conv_w_[b]->tensor, conv_b_[b]->tensor, 2, 1));
    Tensor pooled = reshape(gap(h), {1, config_.width});
    const Shape bank_shape{config_.components, config_.feature_dim};
    GaussianBank bank;
    bank.mu = reshape(linear(pooled, mu_w_->tensor, mu_b_->tensor), bank_shape);
    bank.sigma = add_scalar(softplus(reshape(linear(pooled, sigma_w_->tensor, sigma_b_->tensor), bank_shape)),
                            kSigmaFloor);
    return bank;
}

GaussianBank extract_bank(std::span<const Tensor> encoder_outputs, const ContourExtractor& extractor) {
    if (encoder_outputs.empty()) throw ContractError("extract_bank: no encoder outputs");
    return extractor.forward(encoder_outputs.back());
}

StageOmega::StageOmega(ParameterStore& store, const std::string& name, std::size_t channels,
                       std::size_t components) {
    if (channels == 0 || components == 0) throw ConfigError("omega: T and K must be >= 1");
    param_ = &store.add_constant(name, {channels, components}, 1.0 / static_cast<double>(components));
}

Tensor draw_noise(std::size_t components, std::size_t dim, NoiseMode mode, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> z(components * dim);
    if (mode == NoiseMode::shared) {
        for (std::size_t j = 0; j < dim; ++j) z[j] = normal(rng);
        for (std::size_t k = 1; k < components; ++k) std::copy_n(z.begin(), dim, z.begin() + k * dim);
    } else {
        for (double& v : z) v = normal(rng);
    }
    return Tensor::constant({components, dim}, std::move(z));
}

Tensor component_samples(const GaussianBank& bank, const Tensor& noise) {
    if (noise.shape() != bank.mu.shape()) {
        throw_dimension("reparam_sample", "noise " + shape_str(noise.shape()) + " vs bank " +
                                              shape_str(bank.mu.shape()));
    }
    return mean_last_axis(add(mul(bank.sigma, noise), bank.mu));
}

Tensor project(const Tensor& omega, const Tensor& samples) {
    if (omega.rank() != 2 || samples.rank() != 2 || omega.dim(1) != samples.dim(0)) {
        throw_dimension("reparam_sample", "omega " + shape_str(omega.shape()) + " cannot mix " +
                                              shape_str(samples.shape()));
    }
    return matmul(omega, samples);
}

Tensor reparam_sample(const GaussianBank& bank, const Tensor& omega, std::mt19937_64& rng, NoiseMode mode) {
    Tensor z = draw_noise(bank.components(), bank.dim(), mode, rng);
    return project(omega, component_samples(bank, z));
}

std::vector<std::uint8_t> contour_pixels(std::span<const std::uint8_t> mask, std::size_t h, std::size_t w) {
    if (mask.size() != h * w) throw_dimension("contour_pixels", "mask size does not match grid");
    std::vector<std::uint8_t> contour(h * w, 0);
    auto outside = [&](std::size_t r, std::size_t c) { return mask[r * w + c] == 0; };
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            if (!mask[r * w + c]) continue;
            const bool edge = (r > 0 && outside(r - 1, c)) || (r + 1 < h && outside(r + 1, c)) ||
                              (c > 0 && outside(r, c - 1)) || (c + 1 < w && outside(r, c + 1));
            contour[r * w + c] = edge ? 1 : 0;
        }
    }
    return contour;
}

MaskProcessResult mask_process(std::span<const double> image, std::span<const std::uint8_t> mask, std::size_t h,
                               std::size_t w, std::size_t band) {
    if (image.size() != h * w || mask.size() != h * w) {
        throw_dimension("mask_process", "image, mask and " + std::to_string(h) + "x" + std::to_string(w) +
                                            " grid disagree");
    }
    if (band == 0) throw ContractError("mask_process: band must be >= 1");

    const std::vector<std::uint8_t> contour = contour_pixels(mask, h, w);
    MaskProcessResult result;
    result.image.assign(h * w, 0.0);
    result.degenerate = std::none_of(contour.begin(), contour.end(), [](std::uint8_t v) { return v != 0; });
    if (result.degenerate) {
        result.band.assign(h * w, 0);
        return result;
    }

    // Chebyshev dilation is separable: a row pass then a column pass.
    std::vector<std::uint8_t> rows(h * w, 0);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            if (!contour[r * w + c]) continue;
            const std::size_t lo = c >= band ? c - band : 0;
            const std::size_t hi = std::min(w - 1, c + band);
            for (std::size_t k = lo; k <= hi; ++k) rows[r * w + k] = 1;
        }
    }
    result.band.assign(h * w, 0);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            if (!rows[r * w + c]) continue;
            const std::size_t lo = r >= band ? r - band : 0;
            const std::size_t hi = std::min(h - 1, r + band);
            for (std::size_t k = lo; k <= hi; ++k) result.band[k * w + c] = 1;
        }
    }
    for (std::size_t i = 0; i < h * w; ++i) result.image[i] = result.band[i] ? image[i] : 0.0;
    return result;
}

double kl_coordinate(double mu_a, double sigma_a, double mu_b, double sigma_b) noexcept {
    // With t = log(sigma_a / sigma_b) the variance part is (e^{2t} - 1 - 2t) / 2,
    // which expm1 keeps non-negative even when the banks nearly coincide.
    const double diff = mu_a - mu_b;
    const double t = std::log(sigma_a / sigma_b);
    const double var_part = std::max(0.0, std::expm1(2.0 * t) - 2.0 * t);
    return 0.5 * var_part + diff * diff / (2.0 * sigma_b * sigma_b);
}

Tensor kl_align(const GaussianBank& predicted, const GaussianBank& target, bool target_grad) {
    predicted.validate();
    target.validate();
    if (predicted.mu.shape() != target.mu.shape()) {
        throw_dimension("kl_align", "bank " + shape_str(predicted.mu.shape()) + " vs " +
                                        shape_str(target.mu.shape()));
    }
    const auto ma = predicted.mu.values();
    const auto sa = predicted.sigma.values();
    const auto mb = target.mu.values();
    const auto sb = target.sigma.values();
    const std::size_t n = ma.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += kl_coordinate(ma[i], sa[i], mb[i], sb[i]);
    const double inv_n = 1.0 / static_cast<double>(n);

    std::vector<Tensor> inputs{predicted.mu, predicted.sigma};
    if (target_grad) {
        inputs.push_back(target.mu);
        inputs.push_back(target.sigma);
    } else {
        inputs.push_back(target.mu.detach());
        inputs.push_back(target.sigma.detach());
    }
    return make_op({1}, {total * inv_n}, std::move(inputs), [n, inv_n](ad::Node& self) {
        const double g = self.grad[0] * inv_n;
        double* gma = ad::input_grad(self, 0);
        double* gsa = ad::input_grad(self, 1);
        double* gmb = ad::input_grad(self, 2);
        double* gsb = ad::input_grad(self, 3);
        const auto& ma = self.inputs[0]->value;
        const auto& sa = self.inputs[1]->value;
        const auto& mb = self.inputs[2]->value;
        const auto& sb = self.inputs[3]->value;
        for (std::size_t i = 0; i < n; ++i) {
            const double diff = ma[i] - mb[i];
            const double vb = sb[i] * sb[i];
            if (gma) gma[i] += g * diff / vb;
            if (gsa) gsa[i] += g * (sa[i] / vb - 1.0 / sa[i]);
            if (gmb) gmb[i] -= g * diff / vb;
            if (gsb) gsb[i] += g * (1.0 / sb[i] - (sa[i] * sa[i] + diff * diff) / (vb * sb[i]));
        }
    });
}

}  // namespace cpunet::cpm
