#include "cstvae/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cstvae/errors.hpp"

namespace cstvae {

namespace {

std::uint8_t to_byte(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

}  // namespace

GrayImage quantize(const std::vector<double>& values, i64 h, i64 w) {
    if (static_cast<i64>(values.size()) != h * w) {
        throw DimensionError("quantize: " + std::to_string(values.size()) + " values for " +
                             std::to_string(h) + "x" + std::to_string(w));
    }
    GrayImage img;
    img.h = h;
    img.w = w;
    img.pixels.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) img.pixels[i] = to_byte(values[i]);
    return img;
}

GrayImage quantize(const std::vector<float>& values, i64 h, i64 w) {
    std::vector<double> d(values.begin(), values.end());
    return quantize(d, h, w);
}

GrayImage tile_grid(const std::vector<GrayImage>& images, i64 cols, i64 pad) {
    if (images.empty()) throw ContractError("tile_grid: no images");
    if (cols < 1) throw ContractError("tile_grid: cols must be positive");
    const i64 ih = images.front().h, iw = images.front().w;
    for (const GrayImage& im : images) {
        if (im.h != ih || im.w != iw) throw DimensionError("tile_grid: mixed image sizes");
    }
    const i64 n = static_cast<i64>(images.size());
    const i64 rows = (n + cols - 1) / cols;
    GrayImage out;
    out.w = cols * iw + (cols + 1) * pad;
    out.h = rows * ih + (rows + 1) * pad;
    out.pixels.assign(static_cast<std::size_t>(out.w * out.h), 32);  // dark separator
    for (i64 k = 0; k < n; ++k) {
        const i64 r = k / cols, c = k % cols;
        const i64 y0 = pad + r * (ih + pad);
        const i64 x0 = pad + c * (iw + pad);
        for (i64 y = 0; y < ih; ++y) {
            std::memcpy(out.pixels.data() + (y0 + y) * out.w + x0,
                        images[static_cast<std::size_t>(k)].pixels.data() + y * iw,
                        static_cast<std::size_t>(iw));
        }
    }
    return out;
}

void write_pgm(const std::string& path, const GrayImage& img) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "P5\n" << img.w << " " << img.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw IoError("write failed: " + path);
}

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4], const std::vector<std::uint8_t>& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const std::uint32_t crc = crc32(crc32(0L, Z_NULL, 0), out.data() + crc_start,
                                    static_cast<uInt>(out.size() - crc_start));
    put_be32(out, crc);
}

}  // namespace

void write_png(const std::string& path, const GrayImage& img) {
    // One filter byte (0: none) per scanline, then zlib-deflate the payload.
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>((img.w + 1) * img.h));
    for (i64 y = 0; y < img.h; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), img.pixels.begin() + y * img.w, img.pixels.begin() + (y + 1) * img.w);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
        throw IoError("png: deflate failed for " + path);
    }
    comp.resize(comp_len);

    std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(img.w));
    put_be32(ihdr, static_cast<std::uint32_t>(img.h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // grayscale
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // no interlace
    put_chunk(png, "IHDR", ihdr);
    put_chunk(png, "IDAT", comp);
    put_chunk(png, "IEND", {});

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace cstvae
