#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "cpunet/tensor.hpp"

// Gating-based feature filtering for one decoder stage.
namespace cpunet::gf {

/// The three same-shaped inputs of a decoder stage.
struct StageBundle {
    Tensor up;       // F_up: upsampled output of the deeper stage
    Tensor skip;     // F_skip: encoder features at this resolution
    Tensor contour;  // F_contour: resampled contour features
};

/// F = F_up + F_skip + F_contour. Every input must match F_up's shape.
Tensor fuse_inputs(const StageBundle& bundle);

/// Channel gate G = GELU(conv3x3(F)) times a spatial embedding
/// E = Linear(F) taken along the flattened h*w axis (weights shared across
/// channels). Output keeps F's shape.
class GfLayer {
public:
    /// Registers `<prefix>.linear.{weight,bias}` and `<prefix>.gate_conv.{weight,bias}`.
    GfLayer(ParameterStore& store, const std::string& prefix, std::size_t channels, std::size_t height,
            std::size_t width, std::mt19937_64& rng);

    std::size_t channels() const noexcept { return channels_; }
    std::size_t positions() const noexcept { return height_ * width_; }

    Tensor gate_signal(const Tensor& fused) const;
    Tensor embed(const Tensor& fused) const;
    /// F_gate = G * E elementwise.
    Tensor gate(const Tensor& fused) const;

    Parameter& gate_weight() { return *gate_w_; }
    Parameter& gate_bias() { return *gate_b_; }
    Parameter& linear_weight() { return *linear_w_; }
    Parameter& linear_bias() { return *linear_b_; }

private:
    void check(const Tensor& fused) const;

    std::size_t channels_, height_, width_;
    Parameter* linear_w_;
    Parameter* linear_b_;
    Parameter* gate_w_;
    Parameter* gate_b_;
};

}  // namespace cpunet::gf
