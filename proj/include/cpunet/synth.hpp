#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cpunet::synth {

enum class ShapeFamily { ellipse, perturbed_ellipse, crescent, mixed };

std::string to_string(ShapeFamily family);
ShapeFamily parse_shape_family(const std::string& text);

struct SynthSpec {
    std::size_t count = 16;
    std::size_t height = 64;
    std::size_t width = 64;
    double blur_sigma_lo = 0.5;
    double blur_sigma_hi = 2.0;
    double speckle_strength = 0.15;
    ShapeFamily shape_family = ShapeFamily::mixed;
    bool overlap_artifacts = true;
    /// Boundary band width used for the derived target; the lesion keeps a
    /// margin of band + 1 pixels from the image border.
    std::size_t band = 3;
    double min_area_fraction = 0.03;
    double max_area_fraction = 0.35;

    void validate() const;
};

/// One training example. Pixel values are multiples of 1/255 so that 8-bit
/// files reproduce them exactly.
struct Sample {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> image;          // [0,1], row-major
    std::vector<std::uint8_t> mask;     // 0/1
    std::vector<std::uint8_t> band;     // boundary band of the mask

    std::vector<double> mask_as_double() const;
};

/// Sample `index` of the dataset with the given seed; independent of every
/// other index. Throws DataError after 100 infeasible geometry draws.
Sample generate_sample(const SynthSpec& spec, std::uint64_t seed, std::size_t index);

std::vector<Sample> generate_dataset(const SynthSpec& spec, std::uint64_t seed);

/// Separable Gaussian blur with clamped borders; sigma <= 0 copies the input.
std::vector<double> gaussian_blur(const std::vector<double>& grid, std::size_t h, std::size_t w, double sigma);

}  // namespace cpunet::synth
