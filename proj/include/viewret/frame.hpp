#pragma once

#include "viewret/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace viewret {

/// Grayscale image, row-major, intensities in [0, 1]. Masks use the same type
/// with values 0 or 1.
struct Frame {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;

    Frame() = default;
    Frame(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}

    float at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
    float& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }

    std::size_t size() const noexcept { return pixels.size(); }

    friend bool operator==(const Frame&, const Frame&) = default;
};

inline std::uint8_t to_byte(float v)
{
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

/// Rounds every pixel to the nearest 8-bit level, so in-memory frames equal
/// what write_pgm/read_pgm round-trips.
inline void quantize_8bit(Frame& frame)
{
    for (float& v : frame.pixels) {
        v = static_cast<float>(to_byte(v)) / 255.0f;
    }
}

inline std::string encode_pgm(const Frame& frame)
{
    std::string out = "P5\n" + std::to_string(frame.width) + " " + std::to_string(frame.height) + "\n255\n";
    out.reserve(out.size() + frame.size());
    for (float v : frame.pixels) {
        out.push_back(static_cast<char>(to_byte(v)));
    }
    return out;
}

inline void write_pgm(const std::filesystem::path& path, const Frame& frame)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    const std::string bytes = encode_pgm(frame);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

/// Parses binary 8-bit PGM (P5). maxval must be <= 255.
inline Frame decode_pgm(const std::string& bytes)
{
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') {
                    ++pos;
                }
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&](const char* what) {
        skip_space();
        const std::size_t start = pos;
        long value = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            value = value * 10 + (bytes[pos] - '0');
            if (value > 1'000'000) {
                throw FormatError(std::string("PGM ") + what + " too large", start);
            }
            ++pos;
        }
        if (pos == start) {
            throw FormatError(std::string("PGM: expected ") + what, start);
        }
        return static_cast<std::size_t>(value);
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
        throw FormatError("not a binary PGM (missing P5 magic)", 0);
    }
    pos = 2;
    const std::size_t width = read_int("width");
    const std::size_t height = read_int("height");
    const std::size_t maxval = read_int("maxval");
    if (maxval == 0 || maxval > 255) {
        throw FormatError("PGM maxval must be in 1..255", pos);
    }
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        throw FormatError("PGM header not terminated", pos);
    }
    ++pos;
    if (bytes.size() - pos < width * height) {
        throw FormatError("PGM pixel data truncated", bytes.size());
    }
    Frame frame(height, width);
    for (std::size_t i = 0; i < width * height; ++i) {
        frame.pixels[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<float>(maxval);
    }
    return frame;
}

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

inline Frame read_pgm(const std::filesystem::path& path)
{
    try {
        return decode_pgm(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

} // namespace viewret
