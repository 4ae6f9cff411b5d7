#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cpunet/cpm.hpp"
#include "cpunet/gf.hpp"
#include "cpunet/mgcsd.hpp"
#include "cpunet/tensor.hpp"

namespace cpunet {

struct CpUnetConfig {
    std::size_t stages = 4;          // L encoder stages
    std::size_t base_channels = 16;  // stem width; stage i has base * 2^(i-1)
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t components = 4;      // K
    std::size_t feature_dim = 8;     // d
    std::size_t extractor_width = 16;
    std::size_t groups = 4;
    std::size_t shift_step = 1;
    mgcsd::ShiftMode shift_mode = mgcsd::ShiftMode::translate;
    bool enable_mgcsd = true;
    bool enable_cpm = true;
    bool enable_gf = true;
    std::size_t band = 3;
    std::uint64_t seed = 1;
    /// Let the KL term also train the target-branch extractor.
    bool train_target_branch = false;
    /// Draw fresh noise for every decoder stage instead of once per forward.
    bool redraw_per_stage = false;
    cpm::NoiseMode noise_mode = cpm::NoiseMode::independent;

    /// Channels at resolution level `level` (0 = stem, full resolution).
    std::size_t channels_at(std::size_t level) const;
    void validate() const;
};

/// Inputs of the target branch; only present while training.
struct TrainingTarget {
    std::span<const double> image;
    std::span<const std::uint8_t> mask;
};

struct ForwardOutput {
    Tensor logits;  // [1,h,w] before the sigmoid
    Tensor probs;   // sigmoid(logits)
    std::optional<cpm::GaussianBank> bank_a;
    std::optional<cpm::GaussianBank> bank_b;
    /// One [T,1] contour vector per decoder stage, deepest first.
    std::vector<Tensor> stage_contours;
    /// KL(bank_a || bank_b) when training with CPM enabled, else undefined.
    Tensor kl;
    /// The mask had no contour, so the target image was all zeros.
    bool degenerate_target = false;
};

struct CensusEntry {
    std::string name;
    Shape shape;
    std::size_t count;
};

class CpUnet {
public:
    explicit CpUnet(CpUnetConfig config);
    CpUnet(const CpUnet&) = delete;
    CpUnet& operator=(const CpUnet&) = delete;

    const CpUnetConfig& config() const noexcept { return config_; }
    ParameterStore& parameters() noexcept { return store_; }
    const ParameterStore& parameters() const noexcept { return store_; }

    /// image: [1,h,w]. With a target the KL path runs through the target
    /// extractor; without one that extractor is never touched.
    ForwardOutput forward(const Tensor& image, const TrainingTarget* target, std::mt19937_64& rng) const;

    /// Inference without graph recording; returns probabilities [1,h,w].
    Tensor predict(const Tensor& image, std::mt19937_64& rng) const;

    /// Every parameter exactly once, in registration order. Throws DataError
    /// on duplicate names.
    std::vector<CensusEntry> parameter_census() const;

    // Building blocks, exposed for tests and the gradient-check suite.
    const mgcsd::MgCsdStage* mgcsd_stage(std::size_t i) const;
    const gf::GfLayer* gf_layer(std::size_t level) const;
    const cpm::ContourExtractor* extractor_a() const { return extractor_a_.get(); }
    const cpm::ContourExtractor* extractor_b() const { return extractor_b_.get(); }
    const cpm::StageOmega* omega(std::size_t level) const;

private:
    Tensor encode_plain(std::size_t stage, const Tensor& x) const;

    CpUnetConfig config_;
    ParameterStore store_;
    Parameter* stem_w_;
    Parameter* stem_b_;
    std::vector<std::unique_ptr<mgcsd::MgCsdStage>> mgcsd_;
    std::vector<std::pair<Parameter*, Parameter*>> plain_down_;
    std::vector<std::pair<Parameter*, Parameter*>> plain_conv_;
    // Decoder, indexed by resolution level 0..L-1.
    std::vector<std::pair<Parameter*, Parameter*>> up_;
    std::vector<std::unique_ptr<gf::GfLayer>> gf_;
    std::vector<std::pair<Parameter*, Parameter*>> dec_conv_;
    std::unique_ptr<cpm::ContourExtractor> extractor_a_;
    std::unique_ptr<cpm::ContourExtractor> extractor_b_;
    std::vector<std::unique_ptr<cpm::StageOmega>> omega_;
    Parameter* head_w_;
    Parameter* head_b_;
};

}  // namespace cpunet
