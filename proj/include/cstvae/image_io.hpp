#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cstvae/tensor.hpp"

namespace cstvae {

struct GrayImage {
    i64 w = 0, h = 0;
    std::vector<std::uint8_t> pixels;  // row-major
};

// [0,1] doubles quantized to 8-bit.
GrayImage quantize(const std::vector<double>& values, i64 h, i64 w);
GrayImage quantize(const std::vector<float>& values, i64 h, i64 w);

// Tiles equally sized images into a grid, left-to-right then top-to-bottom,
// with a light separator border.
GrayImage tile_grid(const std::vector<GrayImage>& images, i64 cols, i64 pad = 2);

void write_pgm(const std::string& path, const GrayImage& img);
// Minimal 8-bit grayscale PNG (zlib-compressed, deterministic output).
void write_png(const std::string& path, const GrayImage& img);

}  // namespace cstvae
