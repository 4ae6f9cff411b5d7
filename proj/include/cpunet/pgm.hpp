#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cpunet::io {

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::uint16_t maxval = 255;
    std::vector<std::uint16_t> pixels;  // row-major

    bool operator==(const GrayImage&) const = default;
};

enum class PgmFormat { binary, ascii };  // P5, P2

/// Parses P5 or P2 data. Errors are DataError with the byte offset.
GrayImage parse_pgm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pgm(const GrayImage& image, PgmFormat format = PgmFormat::binary);

GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image, PgmFormat format = PgmFormat::binary);

/// [0,1] values to 8-bit levels, rounding to nearest.
GrayImage from_unit(std::span<const double> values, std::size_t height, std::size_t width);
std::vector<double> to_unit(const GrayImage& image);

/// 0/1 mask to 0/255.
GrayImage from_mask(std::span<const std::uint8_t> mask, std::size_t height, std::size_t width);
/// 0/255 image to 0/1; any other value is a DataError.
std::vector<std::uint8_t> to_mask(const GrayImage& image);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace cpunet::io
