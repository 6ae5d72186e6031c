#pragma once

#include "cgqr/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace cgqr::io {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Gray8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};

struct Rgb8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // interleaved RGB

    Rgb8() = default;
    Rgb8(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}
    void set(int y, int x, std::array<std::uint8_t, 3> rgb)
    {
        std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
        pixels[i] = rgb[0];
        pixels[i + 1] = rgb[1];
        pixels[i + 2] = rgb[2];
    }
};

/// Reads binary (P5) or ASCII (P2) graymaps with maxval <= 255.
Gray8 read_pgm(const std::filesystem::path& path);
std::string encode_pgm(const Gray8& img);
std::string encode_ppm(const Rgb8& img);

/// Writes to a sibling temp file then renames over the target.
void write_atomic(const std::filesystem::path& path, const std::string& bytes);
void write_pgm(const std::filesystem::path& path, const Gray8& img);
void write_ppm(const std::filesystem::path& path, const Rgb8& img);
std::string read_file(const std::filesystem::path& path);

Gray8 to_gray8(const LabelGrid& labels);
LabelGrid labels_from_gray8(const Gray8& img);
ImageGrid image_from_gray8(const Gray8& img);
/// Rounds and clamps to [0, 255].
Gray8 quantize(const ImageGrid& img);
/// Min-max stretch to the full 8-bit range (constant images map to 0).
Gray8 stretch(const ImageGrid& img);

}  // namespace cgqr::io
