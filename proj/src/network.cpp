#include "cpunet/network.hpp"

#include <set>

#include "cpunet/errors.hpp"

namespace cpunet {

std::size_t CpUnetConfig::channels_at(std::size_t level) const {
    return level == 0 ? base_channels : base_channels << (level - 1);
}

void CpUnetConfig::validate() const {
    if (stages == 0) throw ConfigError("network: stages must be >= 1");
    if (base_channels == 0) throw ConfigError("network: base_channels must be >= 1");
    if (stages > 16) throw ConfigError("network: too many stages");
    const std::size_t factor = std::size_t{1} << stages;
    if (height % factor != 0 || width % factor != 0) {
        throw ConfigError("network: input " + std::to_string(height) + "x" + std::to_string(width) +
                          " not divisible by 2^" + std::to_string(stages) + " = " + std::to_string(factor));
    }
    if (height / factor < 2 || width / factor < 2) {
        throw ConfigError("network: deepest map would be smaller than 2x2");
    }
    if (band == 0) throw ConfigError("network: band must be >= 1");
    if (enable_cpm && (components == 0 || feature_dim == 0 || extractor_width == 0)) {
        throw ConfigError("network: K, d and extractor width must be >= 1");
    }
    if (enable_mgcsd) {
        for (std::size_t i = 1; i <= stages; ++i) {
            mgcsd::MgCsdConfig c{channels_at(i - 1), channels_at(i), groups, shift_step, 3, shift_mode};
            c.validate(height >> (i - 1), width >> (i - 1));
        }
    }
}

namespace {

std::pair<Parameter*, Parameter*> add_conv(ParameterStore& store, const std::string& prefix, std::size_t out,
                                           std::size_t in, std::size_t k, std::mt19937_64& rng) {
    Parameter* w = &store.add_kaiming(prefix + ".weight", {out, in, k, k}, in * k * k, rng);
    Parameter* b = &store.add(prefix + ".bias", {out});
    return {w, b};
}

Tensor apply(const std::pair<Parameter*, Parameter*>& conv, const Tensor& x, std::size_t stride) {
    const std::size_t k = conv.first->tensor.dim(2);
    return conv2d(x, conv.first->tensor, conv.second->tensor, stride, k / 2);
}

}  // namespace

CpUnet::CpUnet(CpUnetConfig config) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(config_.seed);
    const std::size_t L = config_.stages;

    auto stem = add_conv(store_, "stem", config_.base_channels, 1, 3, rng);
    stem_w_ = stem.first;
    stem_b_ = stem.second;

    for (std::size_t i = 1; i <= L; ++i) {
        const std::string prefix = "enc.stage" + std::to_string(i);
        const std::size_t in = config_.channels_at(i - 1), out = config_.channels_at(i);
        if (config_.enable_mgcsd) {
            mgcsd::MgCsdConfig c{in, out, config_.groups, config_.shift_step, 3, config_.shift_mode};
            mgcsd_.push_back(std::make_unique<mgcsd::MgCsdStage>(store_, prefix, c, rng));
        } else {
            plain_down_.push_back(add_conv(store_, prefix + ".down", out, in, 3, rng));
            plain_conv_.push_back(add_conv(store_, prefix + ".conv", out, out, 3, rng));
        }
    }

    if (config_.enable_cpm) {
        cpm::ExtractorConfig a{config_.channels_at(L), config_.extractor_width, 4, config_.components,
                               config_.feature_dim};
        extractor_a_ = std::make_unique<cpm::ContourExtractor>(store_, "cpm.extractor_a", a, rng);
        cpm::ExtractorConfig b = a;
        b.in_channels = 1;
        extractor_b_ = std::make_unique<cpm::ContourExtractor>(store_, "cpm.extractor_b", b, rng);
    }

    up_.resize(L);
    gf_.resize(L);
    dec_conv_.resize(L);
    omega_.resize(L);
    for (std::size_t level = L; level-- > 0;) {
        const std::string prefix = "dec.stage" + std::to_string(level);
        const std::size_t c = config_.channels_at(level);
        up_[level] = add_conv(store_, prefix + ".up", c, config_.channels_at(level + 1), 3, rng);
        if (config_.enable_gf) {
            gf_[level] = std::make_unique<gf::GfLayer>(store_, prefix + ".gf", c, config_.height >> level,
                                                       config_.width >> level, rng);
        } else {
            dec_conv_[level] = add_conv(store_, prefix + ".conv", c, c, 3, rng);
        }
        if (config_.enable_cpm) {
            omega_[level] = std::make_unique<cpm::StageOmega>(store_, "cpm.omega" + std::to_string(level), c,
                                                              config_.components);
        }
    }

    auto head = add_conv(store_, "head", 1, config_.base_channels, 1, rng);
    head_w_ = head.first;
    head_b_ = head.second;
}

Tensor CpUnet::encode_plain(std::size_t stage, const Tensor& x) const {
    return gelu(apply(plain_conv_[stage], gelu(apply(plain_down_[stage], x, 2)), 1));
}

ForwardOutput CpUnet::forward(const Tensor& image, const TrainingTarget* target, std::mt19937_64& rng) const {
    const Shape expected{1, config_.height, config_.width};
    if (image.shape() != expected) {
        throw ConfigError("network: input " + shape_str(image.shape()) + " does not match configured " +
                          shape_str(expected));
    }
    const std::size_t L = config_.stages;
    ForwardOutput out;

    std::vector<Tensor> skips;
    skips.reserve(L + 1);
    skips.push_back(gelu(conv2d(image, stem_w_->tensor, stem_b_->tensor, 1, 1)));
    for (std::size_t i = 0; i < L; ++i) {
        skips.push_back(config_.enable_mgcsd ? gelu(mgcsd_[i]->forward(skips.back())) : encode_plain(i, skips.back()));
    }

    Tensor samples;
    if (config_.enable_cpm) {
        out.bank_a = cpm::extract_bank(std::span<const Tensor>(skips).subspan(1), *extractor_a_);
        if (!config_.redraw_per_stage) {
            samples = cpm::component_samples(
                *out.bank_a, cpm::draw_noise(config_.components, config_.feature_dim, config_.noise_mode, rng));
        }
    }

    Tensor x = skips[L];
    for (std::size_t level = L; level-- > 0;) {
        const Tensor& skip = skips[level];
        Tensor up = gelu(apply(up_[level], upsample_nearest2x(x), 1));
        Tensor contour;
        if (config_.enable_cpm) {
            Tensor s = config_.redraw_per_stage
                           ? cpm::component_samples(*out.bank_a, cpm::draw_noise(config_.components,
                                                                                 config_.feature_dim,
                                                                                 config_.noise_mode, rng))
                           : samples;
            Tensor g = cpm::project(omega_[level]->weights(), s);
            out.stage_contours.push_back(g);
            contour = broadcast_to(reshape(g, {g.dim(0), 1, 1}), skip.shape());
        } else {
            contour = Tensor::zeros(skip.shape());
        }
        if (config_.enable_gf) {
            x = gf_[level]->gate(gf::fuse_inputs({up, skip, contour}));
        } else {
            Tensor fused = config_.enable_cpm ? gf::fuse_inputs({up, skip, contour}) : add(up, skip);
            x = gelu(apply(dec_conv_[level], fused, 1));
        }
    }

    out.logits = conv2d(x, head_w_->tensor, head_b_->tensor, 1, 0);
    out.probs = sigmoid(out.logits);

    if (target != nullptr && config_.enable_cpm) {
        const cpm::MaskProcessResult y =
            cpm::mask_process(target->image, target->mask, config_.height, config_.width, config_.band);
        out.degenerate_target = y.degenerate;
        Tensor y_tensor = Tensor::constant(expected, y.image);
        out.bank_b = extractor_b_->forward(y_tensor);
        out.kl = cpm::kl_align(*out.bank_a, *out.bank_b, config_.train_target_branch);
    }
    return out;
}

Tensor CpUnet::predict(const Tensor& image, std::mt19937_64& rng) const {
    ad::NoGradGuard guard;
    return forward(image, nullptr, rng).probs;
}

std::vector<CensusEntry> CpUnet::parameter_census() const {
    std::vector<CensusEntry> census;
    std::set<std::string> names;
    for (std::size_t i = 0; i < store_.size(); ++i) {
        const Parameter& p = store_[i];
        if (!names.insert(p.name).second) throw DataError("parameter census: duplicate name '" + p.name + "'");
        census.push_back({p.name, p.tensor.shape(), p.tensor.numel()});
    }
    return census;
}

const mgcsd::MgCsdStage* CpUnet::mgcsd_stage(std::size_t i) const {
    return i < mgcsd_.size() ? mgcsd_[i].get() : nullptr;
}

const gf::GfLayer* CpUnet::gf_layer(std::size_t level) const {
    return level < gf_.size() ? gf_[level].get() : nullptr;
}

const cpm::StageOmega* CpUnet::omega(std::size_t level) const {
    return level < omega_.size() ? omega_[level].get() : nullptr;
}

}  // namespace cpunet
