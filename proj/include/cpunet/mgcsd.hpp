#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "cpunet/tensor.hpp"

// Multi-group channel shifted downsampling: the encoder stage that replaces
// a plain strided convolution.
namespace cpunet::mgcsd {

enum class ShiftMode {
    translate,  // move each group, zero the vacated cells (default)
    cyclic,     // roll with wrap-around, nothing is zeroed
};

struct MgCsdConfig {
    std::size_t in_channels = 16;
    std::size_t out_channels = 32;
    std::size_t groups = 4;
    std::size_t shift_step = 1;
    std::size_t kernel_size = 3;
    ShiftMode shift_mode = ShiftMode::translate;

    /// Throws ConfigError unless the config can process an h x w input.
    void validate(std::size_t h, std::size_t w) const;
};

/// Splits the channels of x [c,h,w] into `groups` equal groups. Group 0 is
/// left in place; group i moves up by i*step rows and right by i*step
/// columns, so the value at (r, col) lands on (r - i*step, col + i*step).
Tensor group_shift(const Tensor& x, std::size_t groups, std::size_t step,
                   ShiftMode mode = ShiftMode::translate);

/// F = O * F_L + O * F_R with the single-channel spatial map O broadcast over
/// channels.
Tensor fuse_with_mixer(const Tensor& left, const Tensor& right, const Tensor& mixer);

class MgCsdStage {
public:
    /// Registers `<prefix>.{supply,left_down,right,mixer}.{weight,bias}`.
    MgCsdStage(ParameterStore& store, const std::string& prefix, MgCsdConfig config, std::mt19937_64& rng);

    const MgCsdConfig& config() const noexcept { return config_; }

    /// Intermediate maps of one forward pass.
    struct Trace {
        Tensor shifted;      // F_shift
        Tensor supply;       // F_supply
        Tensor weighted;     // GAP(S) * S at full resolution
        Tensor left;         // F_L
        Tensor right;        // F_R
        Tensor mixer;        // O_mixer, [1, h/2, w/2]
        Tensor output;       // F
    };

    /// Shift + supply conv, GAP channel weighting, then the stride-2 conv.
    Tensor left_branch(const Tensor& x) const;
    /// Stride-2 conv that keeps the full local detail (F_R).
    Tensor right_branch(const Tensor& x) const;
    /// sigmoid(conv1x1(F_L + F_R)) -> [1, h', w'].
    Tensor mixer(const Tensor& left, const Tensor& right) const;
    Tensor fuse(const Tensor& left, const Tensor& right) const;
    Tensor forward(const Tensor& x) const;
    Trace trace(const Tensor& x) const;

    Parameter& supply_weight() { return *supply_w_; }
    Parameter& supply_bias() { return *supply_b_; }
    Parameter& mixer_weight() { return *mixer_w_; }
    Parameter& mixer_bias() { return *mixer_b_; }
    Parameter& left_weight() { return *left_w_; }
    Parameter& right_weight() { return *right_w_; }

private:
    void check_input(const Tensor& x) const;
    Tensor left_branch_traced(const Tensor& x, Trace* trace) const;

    MgCsdConfig config_;
    Parameter* supply_w_;
    Parameter* supply_b_;
    Parameter* left_w_;
    Parameter* left_b_;
    Parameter* right_w_;
    Parameter* right_b_;
    Parameter* mixer_w_;
    Parameter* mixer_b_;
};

}  // namespace cpunet::mgcsd
