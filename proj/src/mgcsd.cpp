#include "cpunet/mgcsd.hpp"

#include <algorithm>

#include "cpunet/errors.hpp"

namespace cpunet::mgcsd {

void MgCsdConfig::validate(std::size_t h, std::size_t w) const {
    if (groups == 0 || shift_step == 0) throw ConfigError("mgcsd: groups and shift_step must be >= 1");
    if (in_channels == 0 || out_channels == 0) throw ConfigError("mgcsd: channel counts must be positive");
    if (in_channels % groups != 0) {
        throw ConfigError("mgcsd: " + std::to_string(in_channels) + " channels not divisible into " +
                          std::to_string(groups) + " groups");
    }
    if (kernel_size % 2 == 0) throw ConfigError("mgcsd: kernel_size must be odd");
    if (h % 2 != 0 || w % 2 != 0) {
        throw ConfigError("mgcsd: input " + std::to_string(h) + "x" + std::to_string(w) + " must have even sides");
    }
    if (h < 2 * kernel_size || w < 2 * kernel_size) {
        throw ConfigError("mgcsd: input " + std::to_string(h) + "x" + std::to_string(w) +
                          " smaller than twice the kernel size");
    }
    if (shift_step * (groups - 1) >= std::min(h, w)) {
        throw ConfigError("mgcsd: largest shift " + std::to_string(shift_step * (groups - 1)) +
                          " does not fit a " + std::to_string(h) + "x" + std::to_string(w) + " grid");
    }
}

namespace {

// Source cell feeding output (r, col) of a group moved by `s`, or -1.
inline long source_index(long r, long col, long s, long h, long w, ShiftMode mode) {
    long sr = r + s;
    long sc = col - s;
    if (mode == ShiftMode::cyclic) {
        sr = ((sr % h) + h) % h;
        sc = ((sc % w) + w) % w;
    } else if (sr >= h || sc < 0) {
        return -1;
    }
    return sr * w + sc;
}

}  // namespace

Tensor group_shift(const Tensor& x, std::size_t groups, std::size_t step, ShiftMode mode) {
    if (x.rank() != 3) throw_dimension("group_shift", "input must be [c,h,w], got " + shape_str(x.shape()));
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (groups == 0 || c % groups != 0) {
        throw ConfigError("group_shift: " + std::to_string(c) + " channels not divisible into " +
                          std::to_string(groups) + " groups");
    }
    if (step == 0 || step * (groups - 1) >= std::min(h, w)) {
        throw ConfigError("group_shift: shift of " + std::to_string(step * (groups - 1)) + " exceeds a " +
                          std::to_string(h) + "x" + std::to_string(w) + " grid");
    }
    const std::size_t per_group = c / groups;
    const std::size_t plane = h * w;

    // src[ch * plane + p] is the input cell copied into output p, or -1.
    std::vector<long> src(c * plane);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const long s = static_cast<long>((ch / per_group) * step);
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t col = 0; col < w; ++col) {
                const long from = source_index(static_cast<long>(r), static_cast<long>(col), s,
                                               static_cast<long>(h), static_cast<long>(w), mode);
                src[ch * plane + r * w + col] = from < 0 ? -1 : static_cast<long>(ch * plane) + from;
            }
        }
    }

    const auto xv = x.values();
    std::vector<double> out(xv.size(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (src[i] >= 0) out[i] = xv[static_cast<std::size_t>(src[i])];
    }
    return make_op(x.shape(), std::move(out), {x}, [src = std::move(src)](ad::Node& self) {
        double* gx = ad::input_grad(self, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < src.size(); ++i) {
            if (src[i] >= 0) gx[src[i]] += self.grad[i];
        }
    });
}

Tensor fuse_with_mixer(const Tensor& left, const Tensor& right, const Tensor& mixer) {
    if (left.shape() != right.shape()) {
        throw_dimension("mgcsd fuse", "F_L " + shape_str(left.shape()) + " vs F_R " + shape_str(right.shape()));
    }
    return add(mul(left, mixer), mul(right, mixer));
}

MgCsdStage::MgCsdStage(ParameterStore& store, const std::string& prefix, MgCsdConfig config,
                       std::mt19937_64& rng)
    : config_(config) {
    const std::size_t c = config.in_channels, o = config.out_channels, k = config.kernel_size;
    supply_w_ = &store.add_kaiming(prefix + ".supply.weight", {c, c, k, k}, c * k * k, rng);
    supply_b_ = &store.add(prefix + ".supply.bias", {c});
    left_w_ = &store.add_kaiming(prefix + ".left_down.weight", {o, c, k, k}, c * k * k, rng);
    left_b_ = &store.add(prefix + ".left_down.bias", {o});
    right_w_ = &store.add_kaiming(prefix + ".right.weight", {o, c, k, k}, c * k * k, rng);
    right_b_ = &store.add(prefix + ".right.bias", {o});
    mixer_w_ = &store.add_kaiming(prefix + ".mixer.weight", {1, o, 1, 1}, o, rng);
    mixer_b_ = &store.add(prefix + ".mixer.bias", {1});
}

void MgCsdStage::check_input(const Tensor& x) const {
    if (x.rank() != 3) throw_dimension("mgcsd", "input must be [c,h,w], got " + shape_str(x.shape()));
    if (x.dim(0) != config_.in_channels) {
        throw_dimension("mgcsd", "expected " + std::to_string(config_.in_channels) + " channels, got " +
                                     shape_str(x.shape()));
    }
    config_.validate(x.dim(1), x.dim(2));
}

Tensor MgCsdStage::left_branch_traced(const Tensor& x, Trace* trace) const {
    check_input(x);
    const std::size_t pad = config_.kernel_size / 2;
    Tensor shifted = group_shift(x, config_.groups, config_.shift_step, config_.shift_mode);
    Tensor supply = conv2d(x, supply_w_->tensor, supply_b_->tensor, 1, pad);
    Tensor s = add(shifted, supply);
    Tensor weighted = mul(s, gap(s));
    Tensor left = conv2d(weighted, left_w_->tensor, left_b_->tensor, 2, pad);
    if (trace) {
        trace->shifted = shifted;
        trace->supply = supply;
        trace->weighted = weighted;
        trace->left = left;
    }
    return left;
}

Tensor MgCsdStage::left_branch(const Tensor& x) const { return left_branch_traced(x, nullptr); }

Tensor MgCsdStage::right_branch(const Tensor& x) const {
    check_input(x);
    return conv2d(x, right_w_->tensor, right_b_->tensor, 2, config_.kernel_size / 2);
}

Tensor MgCsdStage::mixer(const Tensor& left, const Tensor& right) const {
    return sigmoid(conv2d(add(left, right), mixer_w_->tensor, mixer_b_->tensor, 1, 0));
}

Tensor MgCsdStage::fuse(const Tensor& left, const Tensor& right) const {
    if (left.shape() != right.shape()) {
        throw_dimension("mgcsd fuse", "F_L " + shape_str(left.shape()) + " vs F_R " + shape_str(right.shape()));
    }
    return fuse_with_mixer(left, right, mixer(left, right));
}

Tensor MgCsdStage::forward(const Tensor& x) const { return fuse(left_branch(x), right_branch(x)); }

MgCsdStage::Trace MgCsdStage::trace(const Tensor& x) const {
    Trace t;
    left_branch_traced(x, &t);
    t.right = right_branch(x);
    t.mixer = mixer(t.left, t.right);
    t.output = fuse_with_mixer(t.left, t.right, t.mixer);
    return t;
}

}  // namespace cpunet::mgcsd
