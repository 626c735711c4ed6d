#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cstvae/tensor.hpp"

namespace cstvae {

// Flat binary tensor container: a magic tag, then per record the name, a
// dtype code (f32 for datasets, f64 for checkpoints), little-endian 64-bit
// dims and raw data. Checkpoints need f64 so a resumed run is bit-identical
// to an uninterrupted one.
struct NamedTensor {
    std::string name;
    Shape shape;
    bool f64 = false;
    std::vector<double> data;  // held as double; written per the dtype flag
};

void write_tensor_container(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensor_container(const std::string& path);

// CRC-32 of a whole file (zlib polynomial), for manifests and the
// determinism checks.
std::uint32_t crc32_file(const std::string& path);
std::string crc32_hex(std::uint32_t crc);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace cstvae
