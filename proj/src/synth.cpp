#include "cpunet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "cpunet/cpm.hpp"
#include "cpunet/errors.hpp"

namespace cpunet::synth {

std::string to_string(ShapeFamily family) {
    switch (family) {
        case ShapeFamily::ellipse: return "ellipse";
        case ShapeFamily::perturbed_ellipse: return "perturbed-ellipse";
        case ShapeFamily::crescent: return "crescent";
        case ShapeFamily::mixed: return "mixed";
    }
    return "mixed";
}

ShapeFamily parse_shape_family(const std::string& text) {
    if (text == "ellipse") return ShapeFamily::ellipse;
    if (text == "perturbed-ellipse") return ShapeFamily::perturbed_ellipse;
    if (text == "crescent") return ShapeFamily::crescent;
    if (text == "mixed") return ShapeFamily::mixed;
    throw ConfigError("unknown shape family '" + text + "'");
}

void SynthSpec::validate() const {
    if (height < 8 || width < 8) throw ConfigError("synth: images must be at least 8x8");
    if (blur_sigma_lo < 0.0 || blur_sigma_hi < blur_sigma_lo) throw ConfigError("synth: bad blur sigma range");
    if (speckle_strength < 0.0) throw ConfigError("synth: speckle_strength must be >= 0");
    if (!(min_area_fraction > 0.0) || max_area_fraction <= min_area_fraction || max_area_fraction >= 1.0) {
        throw ConfigError("synth: area fraction bounds must satisfy 0 < min < max < 1");
    }
    if (2 * (band + 1) + 4 > std::min(height, width)) throw ConfigError("synth: band too wide for image size");
}

std::vector<double> Sample::mask_as_double() const {
    std::vector<double> out(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] ? 1.0 : 0.0;
    return out;
}

std::vector<double> gaussian_blur(const std::vector<double>& grid, std::size_t h, std::size_t w, double sigma) {
    if (sigma <= 0.0) return grid;
    const long radius = static_cast<long>(std::ceil(3.0 * sigma));
    std::vector<double> taps(2 * radius + 1);
    double norm = 0.0;
    for (long k = -radius; k <= radius; ++k) {
        taps[k + radius] = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
        norm += taps[k + radius];
    }
    for (double& t : taps) t /= norm;

    const long H = static_cast<long>(h), W = static_cast<long>(w);
    std::vector<double> tmp(grid.size()), out(grid.size());
    for (long r = 0; r < H; ++r) {
        for (long c = 0; c < W; ++c) {
            double acc = 0.0;
            for (long k = -radius; k <= radius; ++k) acc += taps[k + radius] * grid[r * W + std::clamp(c + k, 0L, W - 1)];
            tmp[r * W + c] = acc;
        }
    }
    for (long r = 0; r < H; ++r) {
        for (long c = 0; c < W; ++c) {
            double acc = 0.0;
            for (long k = -radius; k <= radius; ++k) acc += taps[k + radius] * tmp[std::clamp(r + k, 0L, H - 1) * W + c];
            out[r * W + c] = acc;
        }
    }
    return out;
}

namespace {

struct Ellipse {
    double cx, cy, a, b, theta;

    // Normalised radius: < 1 inside.
    double radius(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(theta), s = std::sin(theta);
        const double u = (c * dx + s * dy) / a, v = (-s * dx + c * dy) / b;
        return std::sqrt(u * u + v * v);
    }
    double angle(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(theta), s = std::sin(theta);
        return std::atan2((-s * dx + c * dy) / b, (c * dx + s * dy) / a);
    }
};

std::vector<std::uint8_t> draw_lesion(ShapeFamily family, std::size_t h, std::size_t w, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double side = static_cast<double>(std::min(h, w));
    Ellipse e{};
    e.cx = static_cast<double>(w) * (0.3 + 0.4 * unit(rng));
    e.cy = static_cast<double>(h) * (0.3 + 0.4 * unit(rng));
    e.a = side * (0.12 + 0.16 * unit(rng));
    e.b = side * (0.12 + 0.16 * unit(rng));
    e.theta = std::numbers::pi * unit(rng);

    // Harmonic boundary wobble for irregular outlines.
    double amp[4] = {0, 0, 0, 0}, phase[4] = {0, 0, 0, 0};
    if (family == ShapeFamily::perturbed_ellipse) {
        for (int m = 0; m < 4; ++m) {
            amp[m] = 0.04 + 0.10 * unit(rng);
            phase[m] = 2.0 * std::numbers::pi * unit(rng);
        }
    }
    Ellipse bite = e;
    if (family == ShapeFamily::crescent) {
        const double shift = 0.45 + 0.25 * unit(rng);
        const double dir = 2.0 * std::numbers::pi * unit(rng);
        bite.cx += shift * e.a * std::cos(dir);
        bite.cy += shift * e.b * std::sin(dir);
        bite.a *= 0.85;
        bite.b *= 0.85;
    }

    std::vector<std::uint8_t> mask(h * w, 0);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const double x = static_cast<double>(c) + 0.5, y = static_cast<double>(r) + 0.5;
            double limit = 1.0;
            if (family == ShapeFamily::perturbed_ellipse) {
                const double phi = e.angle(x, y);
                for (int m = 0; m < 4; ++m) limit += amp[m] * std::cos((m + 2) * phi + phase[m]);
            }
            bool inside = e.radius(x, y) <= limit;
            if (family == ShapeFamily::crescent && bite.radius(x, y) <= 1.0) inside = false;
            mask[r * w + c] = inside ? 1 : 0;
        }
    }
    return mask;
}

bool acceptable(const std::vector<std::uint8_t>& mask, const SynthSpec& spec) {
    const std::size_t margin = spec.band + 1;
    std::size_t area = 0;
    for (std::size_t r = 0; r < spec.height; ++r) {
        for (std::size_t c = 0; c < spec.width; ++c) {
            if (!mask[r * spec.width + c]) continue;
            ++area;
            if (r < margin || c < margin || r + margin >= spec.height || c + margin >= spec.width) return false;
        }
    }
    const double frac = static_cast<double>(area) / static_cast<double>(spec.height * spec.width);
    return frac >= spec.min_area_fraction && frac <= spec.max_area_fraction;
}

void add_streak(std::vector<double>& img, std::size_t h, std::size_t w, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double angle = std::numbers::pi * unit(rng);
    const double ox = static_cast<double>(w) * unit(rng), oy = static_cast<double>(h) * unit(rng);
    const double strength = 0.15 + 0.2 * unit(rng);
    const double half_width = 0.6 + 0.8 * unit(rng);
    const double nx = -std::sin(angle), ny = std::cos(angle);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const double d = std::abs((static_cast<double>(c) - ox) * nx + (static_cast<double>(r) - oy) * ny);
            if (d < 2.0 * half_width) img[r * w + c] += strength * std::exp(-0.5 * (d / half_width) * (d / half_width));
        }
    }
}

}  // namespace

Sample generate_sample(const SynthSpec& spec, std::uint64_t seed, std::size_t index) {
    spec.validate();
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t h = spec.height, w = spec.width;

    std::vector<std::uint8_t> mask;
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        ShapeFamily family = spec.shape_family;
        if (family == ShapeFamily::mixed) family = static_cast<ShapeFamily>(rng() % 3);
        mask = draw_lesion(family, h, w, rng);
        placed = acceptable(mask, spec);
    }
    if (!placed) {
        throw DataError("synth: no feasible lesion for sample " + std::to_string(index) +
                        " after 100 attempts (check size, band and area bounds)");
    }

    const double background = 0.55 + 0.2 * unit(rng);
    const double lesion = 0.1 + 0.2 * unit(rng);
    const double fx = 0.15 + 0.3 * unit(rng), fy = 0.15 + 0.3 * unit(rng);
    const double px = 2.0 * std::numbers::pi * unit(rng), py = 2.0 * std::numbers::pi * unit(rng);
    const double sigma = spec.blur_sigma_lo + (spec.blur_sigma_hi - spec.blur_sigma_lo) * unit(rng);

    std::vector<double> alpha(h * w);
    for (std::size_t i = 0; i < h * w; ++i) alpha[i] = mask[i] ? 1.0 : 0.0;
    alpha = gaussian_blur(alpha, h, w, sigma);

    std::vector<double> img(h * w);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const double texture = 0.05 * std::sin(fx * static_cast<double>(c) + px) *
                                   std::sin(fy * static_cast<double>(r) + py);
            const double a = alpha[r * w + c];
            img[r * w + c] = (background + texture) * (1.0 - a) + lesion * a;
        }
    }
    if (spec.overlap_artifacts) {
        const int streaks = 1 + static_cast<int>(rng() % 2);
        for (int s = 0; s < streaks; ++s) add_streak(img, h, w, rng);
    }
    if (spec.speckle_strength > 0.0) {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (double& v : img) v *= std::max(0.0, 1.0 + spec.speckle_strength * normal(rng));
    }

    Sample sample;
    sample.height = h;
    sample.width = w;
    sample.image.resize(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
        sample.image[i] = std::round(std::clamp(img[i], 0.0, 1.0) * 255.0) / 255.0;
    }
    sample.mask = std::move(mask);
    sample.band = cpm::mask_process(sample.image, sample.mask, h, w, spec.band).band;
    return sample;
}

std::vector<Sample> generate_dataset(const SynthSpec& spec, std::uint64_t seed) {
    std::vector<Sample> samples;
    samples.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) samples.push_back(generate_sample(spec, seed, i));
    return samples;
}

}  // namespace cpunet::synth
