#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cpunet/tensor.hpp"

// Contour probabilistic modeling: a bank of K diagonal Gaussians predicted
// from encoder features, sampled with the reparameterization trick and pulled
// toward a bank predicted from the boundary band of the ground-truth mask.
namespace cpunet::cpm {

/// K diagonal Gaussians over a d-dimensional feature: mu and sigma are [K,d].
struct GaussianBank {
    Tensor mu;
    Tensor sigma;

    std::size_t components() const { return mu.dim(0); }
    std::size_t dim() const { return mu.dim(1); }
    /// Shapes agree, K, d >= 1 and every sigma is strictly positive.
    void validate() const;
};

constexpr double kSigmaFloor = 1e-6;

struct ExtractorConfig {
    std::size_t in_channels = 128;
    std::size_t width = 16;
    std::size_t blocks = 4;
    std::size_t components = 4;  // K
    std::size_t feature_dim = 8;  // d
};

/// Stack of stride-2 conv + GELU blocks, global average pooling and two
/// linear heads producing K*d means and K*d pre-softplus scales.
class ContourExtractor {
public:
    ContourExtractor(ParameterStore& store, const std::string& prefix, ExtractorConfig config,
                     std::mt19937_64& rng);

    const ExtractorConfig& config() const noexcept { return config_; }
    std::size_t min_spatial() const noexcept { return 2; }

    /// x: [in_channels, h, w]. sigma = softplus(pre) + 1e-6.
    GaussianBank forward(const Tensor& x) const;

    std::vector<Parameter*> parameters() const { return params_; }

private:
    ExtractorConfig config_;
    std::vector<Parameter*> conv_w_;
    std::vector<Parameter*> conv_b_;
    Parameter* mu_w_;
    Parameter* mu_b_;
    Parameter* sigma_w_;
    Parameter* sigma_b_;
    std::vector<Parameter*> params_;
};

/// Runs the extractor on the deepest encoder map (the last entry).
GaussianBank extract_bank(std::span<const Tensor> encoder_outputs, const ContourExtractor& extractor);

/// Learnable T x K mixing weights of one decoder stage, initialised to 1/K.
class StageOmega {
public:
    StageOmega(ParameterStore& store, const std::string& name, std::size_t channels, std::size_t components);

    const Tensor& weights() const { return param_->tensor; }
    std::size_t channels() const { return param_->tensor.dim(0); }
    std::size_t components() const { return param_->tensor.dim(1); }
    Parameter& parameter() { return *param_; }

private:
    Parameter* param_;
};

enum class NoiseMode {
    independent,  // one z per component and coordinate (default)
    shared,       // one z per coordinate, reused by every component
};

/// Standard normal noise shaped [K,d] as a constant tensor.
Tensor draw_noise(std::size_t components, std::size_t dim, NoiseMode mode, std::mt19937_64& rng);

/// s_k = mean_j (z_kj * sigma_kj + mu_kj), returned as [K,1].
Tensor component_samples(const GaussianBank& bank, const Tensor& noise);

/// G = Omega s, returned as [T,1].
Tensor project(const Tensor& omega, const Tensor& samples);

/// One full draw: project(omega, component_samples(bank, draw_noise(...))).
Tensor reparam_sample(const GaussianBank& bank, const Tensor& omega, std::mt19937_64& rng,
                      NoiseMode mode = NoiseMode::independent);

struct MaskProcessResult {
    std::vector<double> image;   // Y = X on the band, 0 elsewhere
    std::vector<std::uint8_t> band;
    /// No contour pixel exists (empty or boundary-free mask); image is zero.
    bool degenerate = false;
};

/// Mask pixels with at least one in-grid 4-neighbour outside the mask.
std::vector<std::uint8_t> contour_pixels(std::span<const std::uint8_t> mask, std::size_t h, std::size_t w);

/// Keeps the pixels of `image` within Chebyshev distance `band` of the mask
/// contour and zeroes the rest.
MaskProcessResult mask_process(std::span<const double> image, std::span<const std::uint8_t> mask, std::size_t h,
                               std::size_t w, std::size_t band);

/// KL(N(mu_a, sigma_a) || N(mu_b, sigma_b)) for one coordinate.
double kl_coordinate(double mu_a, double sigma_a, double mu_b, double sigma_b) noexcept;

/// Mean over all K*d coordinates of the per-coordinate KL divergence. The
/// target bank receives gradients only when `target_grad` is set.
Tensor kl_align(const GaussianBank& predicted, const GaussianBank& target, bool target_grad = false);

}  // namespace cpunet::cpm
