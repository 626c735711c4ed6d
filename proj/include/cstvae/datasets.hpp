#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cstvae/tensor.hpp"

namespace cstvae {

// Image collection with one or two labels per image. Pixels live in [0,1];
// binarized sets contain only {0,1}. Superimposed sets retain the two
// generating layers for diagnostics; they are never fed to training.
struct LabeledImageSet {
    i64 n = 0, h = 0, w = 0;
    std::vector<float> images;         // n*h*w, row-major
    std::vector<std::int32_t> labels;  // n * labels_per
    int labels_per = 1;
    std::vector<float> layers;  // optional, n*2*h*w (front layer first)

    i64 pixels() const { return h * w; }
    bool has_layers() const { return !layers.empty(); }
    // Copies the selected images into a dense double matrix [idx.size() x h*w].
    void gather(const std::vector<i64>& idx, std::vector<double>& out) const;
};

// Big-endian IDX files; image magic 0x00000803, label magic 0x00000801.
// Pixel bytes are scaled to [0,1].
LabeledImageSet load_idx(const std::string& images_path, const std::string& labels_path);

// pixel -> 1 iff value > threshold
LabeledImageSet binarize(const LabeledImageSet& s, double threshold = 0.5);

// Each digit placed at an integer offset drawn uniformly over the valid
// range of a black canvas. Per-image seeds derive from (seed, index).
LabeledImageSet translate_set(const LabeledImageSet& s, i64 canvas_h, i64 canvas_w, std::uint64_t seed);

// Draws two source digits (with replacement), translates each into the
// canvas, and composites front over back; for binary sources the over
// operator reduces to a pixelwise union. Labels hold (back, front) in draw
// order; pair accuracy compares unordered. Ground-truth layers are kept.
LabeledImageSet superimpose_set(const LabeledImageSet& s, i64 canvas, i64 count, std::uint64_t seed);

struct DatasetBundle {
    LabeledImageSet train;
    LabeledImageSet test;
    std::string manifest_json;  // config, seed, counts, checksums
};

// Directory layout: manifest.json plus data.bin (the tensor container).
void save_dataset(const std::string& dir, const DatasetBundle& bundle);
DatasetBundle load_dataset(const std::string& dir);

// Assembles the manifest (written by save_dataset) from generation settings.
std::string dataset_manifest(const std::string& kind, std::uint64_t seed,
                             const LabeledImageSet& train, const LabeledImageSet& test,
                             const std::string& extra_json_fields);

}  // namespace cstvae
