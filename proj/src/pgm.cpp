#include "cpunet/pgm.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "cpunet/errors.hpp"

namespace cpunet::io {

namespace {

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    [[noreturn]] void fail(const std::string& what) const {
        throw DataError("pgm: " + what + " at byte offset " + std::to_string(pos_));
    }

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    unsigned long number() {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail("expected a decimal number");
        unsigned long v = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + (bytes_[pos_] - '0');
            if (v > 0xFFFFFFFFul) fail("number too large");
            ++pos_;
        }
        return v;
    }

    std::size_t pos_ = 0;
    std::span<const std::uint8_t> bytes_;
};

}  // namespace

GrayImage parse_pgm(std::span<const std::uint8_t> bytes) {
    Reader in(bytes);
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '2')) {
        in.fail("missing P5/P2 magic");
    }
    const bool binary = bytes[1] == '5';
    in.pos_ = 2;
    GrayImage img;
    img.width = in.number();
    img.height = in.number();
    const unsigned long maxval = in.number();
    if (img.width == 0 || img.height == 0) in.fail("zero image dimension");
    if (maxval == 0 || maxval > 65535) in.fail("maxval out of range");
    img.maxval = static_cast<std::uint16_t>(maxval);
    const std::size_t count = img.width * img.height;
    img.pixels.resize(count);

    if (binary) {
        if (in.pos_ >= bytes.size() || !std::isspace(bytes[in.pos_])) in.fail("expected whitespace after header");
        ++in.pos_;
        const std::size_t depth = maxval > 255 ? 2 : 1;
        if (bytes.size() - in.pos_ < count * depth) in.fail("truncated raster");
        for (std::size_t i = 0; i < count; ++i) {
            std::uint16_t v = bytes[in.pos_];
            if (depth == 2) v = static_cast<std::uint16_t>((v << 8) | bytes[in.pos_ + 1]);
            if (v > maxval) in.fail("sample exceeds maxval");
            img.pixels[i] = v;
            in.pos_ += depth;
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            const unsigned long v = in.number();
            if (v > maxval) in.fail("sample exceeds maxval");
            img.pixels[i] = static_cast<std::uint16_t>(v);
        }
    }
    return img;
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& image, PgmFormat format) {
    if (image.pixels.size() != image.width * image.height) throw ContractError("pgm: pixel count mismatch");
    std::string header = (format == PgmFormat::binary ? "P5\n" : "P2\n") + std::to_string(image.width) + " " +
                         std::to_string(image.height) + "\n" + std::to_string(image.maxval) + "\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    if (format == PgmFormat::binary) {
        const bool wide = image.maxval > 255;
        for (std::uint16_t v : image.pixels) {
            if (wide) out.push_back(static_cast<std::uint8_t>(v >> 8));
            out.push_back(static_cast<std::uint8_t>(v & 0xFF));
        }
    } else {
        for (std::size_t r = 0; r < image.height; ++r) {
            std::string line;
            for (std::size_t c = 0; c < image.width; ++c) {
                if (c) line += ' ';
                line += std::to_string(image.pixels[r * image.width + c]);
            }
            line += '\n';
            out.insert(out.end(), line.begin(), line.end());
        }
    }
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

GrayImage read_pgm(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return parse_pgm(bytes);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image, PgmFormat format) {
    write_file(path, encode_pgm(image, format));
}

GrayImage from_unit(std::span<const double> values, std::size_t height, std::size_t width) {
    if (values.size() != height * width) throw ContractError("from_unit: size mismatch");
    GrayImage img{width, height, 255, std::vector<std::uint16_t>(values.size())};
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = std::round(std::min(1.0, std::max(0.0, values[i])) * 255.0);
        img.pixels[i] = static_cast<std::uint16_t>(v);
    }
    return img;
}

std::vector<double> to_unit(const GrayImage& image) {
    std::vector<double> out(image.pixels.size());
    const double scale = static_cast<double>(image.maxval);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(image.pixels[i]) / scale;
    return out;
}

GrayImage from_mask(std::span<const std::uint8_t> mask, std::size_t height, std::size_t width) {
    if (mask.size() != height * width) throw ContractError("from_mask: size mismatch");
    GrayImage img{width, height, 255, std::vector<std::uint16_t>(mask.size())};
    for (std::size_t i = 0; i < mask.size(); ++i) img.pixels[i] = mask[i] ? 255 : 0;
    return img;
}

std::vector<std::uint8_t> to_mask(const GrayImage& image) {
    std::vector<std::uint8_t> out(image.pixels.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::uint16_t v = image.pixels[i];
        if (v != 0 && v != 255) {
            throw DataError("mask pixel " + std::to_string(i) + " has value " + std::to_string(v) +
                            "; masks must be 0 or 255");
        }
        out[i] = v ? 1 : 0;
    }
    return out;
}

}  // namespace cpunet::io
