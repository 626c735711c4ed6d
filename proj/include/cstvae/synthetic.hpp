#pragma once

#include <cstdint>

#include "cstvae/datasets.hpp"

namespace cstvae {

// Procedural 28x28 digit corpus: stroke-based glyphs with per-image affine
// jitter (rotation, scale, shear) and stroke-width variation. Class-balanced
// in expectation and fully determined by the seed. Stands in for handwritten
// digits when no IDX files are available.
LabeledImageSet synthesize_digits(i64 n, std::uint64_t seed);

// Writes a set as big-endian IDX files (pixels quantized to bytes), the
// inverse of load_idx.
void write_idx(const LabeledImageSet& s, const std::string& images_path,
               const std::string& labels_path);

}  // namespace cstvae
