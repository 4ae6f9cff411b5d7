#include "cpunet/gf.hpp"

#include "cpunet/errors.hpp"

namespace cpunet::gf {

Tensor fuse_inputs(const StageBundle& bundle) {
    const Shape& shape = bundle.up.shape();
    if (shape.size() != 3) throw_dimension("gf fuse", "F_up must be [c,h,w], got " + shape_str(shape));
    if (bundle.skip.shape() != shape) {
        throw_dimension("gf fuse", "F_skip " + shape_str(bundle.skip.shape()) + " does not match F_up " +
                                       shape_str(shape));
    }
    if (bundle.contour.shape() != shape) {
        throw_dimension("gf fuse", "F_contour " + shape_str(bundle.contour.shape()) + " does not match F_up " +
                                       shape_str(shape));
    }
    return add(add(bundle.up, bundle.skip), bundle.contour);
}

GfLayer::GfLayer(ParameterStore& store, const std::string& prefix, std::size_t channels, std::size_t height,
                 std::size_t width, std::mt19937_64& rng)
    : channels_(channels), height_(height), width_(width) {
    const std::size_t n = height * width;
    if (channels == 0 || n == 0) throw ConfigError("gf: empty stage");
    linear_w_ = &store.add_kaiming(prefix + ".linear.weight", {n, n}, n, rng);
    linear_b_ = &store.add(prefix + ".linear.bias", {n});
    gate_w_ = &store.add_kaiming(prefix + ".gate_conv.weight", {channels, channels, 3, 3}, channels * 9, rng);
    gate_b_ = &store.add(prefix + ".gate_conv.bias", {channels});
}

void GfLayer::check(const Tensor& fused) const {
    if (fused.rank() != 3 || fused.dim(0) != channels_) {
        throw_dimension("gf gate", "expected " + std::to_string(channels_) + " channels, got " +
                                       shape_str(fused.shape()));
    }
    if (fused.dim(1) != height_ || fused.dim(2) != width_) {
        throw ConfigError("gf gate: layer embeds a " + std::to_string(height_) + "x" + std::to_string(width_) +
                          " grid, input is " + std::to_string(fused.dim(1)) + "x" + std::to_string(fused.dim(2)));
    }
}

Tensor GfLayer::gate_signal(const Tensor& fused) const {
    check(fused);
    return gelu(conv2d(fused, gate_w_->tensor, gate_b_->tensor, 1, 1));
}

Tensor GfLayer::embed(const Tensor& fused) const {
    check(fused);
    Tensor flat = reshape(fused, {channels_, positions()});
    return reshape(linear(flat, linear_w_->tensor, linear_b_->tensor), fused.shape());
}

Tensor GfLayer::gate(const Tensor& fused) const { return mul(gate_signal(fused), embed(fused)); }

}  // namespace cpunet::gf
