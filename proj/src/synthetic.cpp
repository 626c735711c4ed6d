#include "cstvae/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "cstvae/errors.hpp"
#include "cstvae/rng.hpp"

namespace cstvae {

namespace {

struct Seg {
    double x0, y0, x1, y1;
};

// Glyphs as polylines in the unit square, x right, y down.
std::vector<Seg> polyline(std::initializer_list<std::pair<double, double>> pts) {
    std::vector<Seg> segs;
    auto it = pts.begin();
    auto prev = *it++;
    for (; it != pts.end(); ++it) {
        segs.push_back({prev.first, prev.second, it->first, it->second});
        prev = *it;
    }
    return segs;
}

std::vector<Seg> ring(double cx, double cy, double rx, double ry, int sides = 10) {
    std::vector<Seg> segs;
    double px = cx + rx, py = cy;
    for (int i = 1; i <= sides; ++i) {
        const double a = 2.0 * std::numbers::pi * i / sides;
        const double nx = cx + rx * std::cos(a);
        const double ny = cy + ry * std::sin(a);
        segs.push_back({px, py, nx, ny});
        px = nx;
        py = ny;
    }
    return segs;
}

void extend(std::vector<Seg>& dst, const std::vector<Seg>& src) {
    dst.insert(dst.end(), src.begin(), src.end());
}

const std::vector<std::vector<Seg>>& glyphs() {
    static const std::vector<std::vector<Seg>> g = [] {
        std::vector<std::vector<Seg>> v(10);
        v[0] = ring(0.50, 0.50, 0.26, 0.38);
        v[1] = polyline({{0.34, 0.24}, {0.52, 0.08}, {0.52, 0.92}});
        extend(v[1], polyline({{0.36, 0.92}, {0.68, 0.92}}));
        v[2] = polyline({{0.24, 0.28}, {0.34, 0.10}, {0.62, 0.08}, {0.76, 0.24}, {0.70, 0.44},
                         {0.26, 0.90}, {0.78, 0.90}});
        v[3] = polyline({{0.26, 0.14}, {0.58, 0.08}, {0.74, 0.24}, {0.58, 0.44}, {0.44, 0.48}});
        extend(v[3], polyline({{0.44, 0.48}, {0.62, 0.52}, {0.78, 0.70}, {0.58, 0.90}, {0.26, 0.84}}));
        v[4] = polyline({{0.62, 0.92}, {0.62, 0.08}, {0.20, 0.62}, {0.82, 0.62}});
        v[5] = polyline({{0.74, 0.10}, {0.28, 0.10}, {0.24, 0.46}, {0.54, 0.42}, {0.76, 0.56},
                         {0.72, 0.80}, {0.50, 0.92}, {0.26, 0.84}});
        v[6] = polyline({{0.66, 0.08}, {0.42, 0.32}, {0.30, 0.58}});
        extend(v[6], ring(0.52, 0.68, 0.21, 0.21, 8));
        v[7] = polyline({{0.22, 0.10}, {0.78, 0.10}, {0.42, 0.92}});
        v[8] = ring(0.50, 0.30, 0.185, 0.185, 8);
        extend(v[8], ring(0.50, 0.71, 0.215, 0.215, 8));
        v[9] = ring(0.48, 0.32, 0.20, 0.20, 8);
        extend(v[9], polyline({{0.67, 0.38}, {0.60, 0.92}}));
        return v;
    }();
    return g;
}

double seg_dist(const Seg& s, double x, double y) {
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((x - s.x0) * dx + (y - s.y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double px = s.x0 + t * dx - x;
    const double py = s.y0 + t * dy - y;
    return std::sqrt(px * px + py * py);
}

}  // namespace

LabeledImageSet synthesize_digits(i64 n, std::uint64_t seed) {
    if (n <= 0) throw ContractError("synthesize_digits: count must be positive");
    constexpr i64 kSize = 28;
    constexpr i64 kBox = 20;  // glyph box, centered like the classic corpus
    constexpr i64 kMargin = (kSize - kBox) / 2;

    LabeledImageSet out;
    out.n = n;
    out.h = kSize;
    out.w = kSize;
    out.labels.resize(static_cast<std::size_t>(n));
    out.images.assign(static_cast<std::size_t>(n * kSize * kSize), 0.0f);

    for (i64 i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        const int digit = static_cast<int>(rng.uniform_int(10));
        out.labels[static_cast<std::size_t>(i)] = digit;

        const double rot = rng.uniform(-0.22, 0.22);
        const double sx = rng.uniform(0.82, 1.10);
        const double sy = rng.uniform(0.82, 1.10);
        const double shear = rng.uniform(-0.18, 0.18);
        const double ox = rng.uniform(-0.04, 0.04);
        const double oy = rng.uniform(-0.04, 0.04);
        const double thickness = rng.uniform(0.050, 0.085);
        const double cr = std::cos(rot), sr = std::sin(rot);

        // Jitter the glyph segments around the box center.
        auto warp = [&](double x, double y, double& wx, double& wy) {
            double px = (x - 0.5) * sx;
            double py = (y - 0.5) * sy;
            px += shear * py;
            wx = cr * px - sr * py + 0.5 + ox;
            wy = sr * px + cr * py + 0.5 + oy;
        };
        std::vector<Seg> segs;
        for (const Seg& s : glyphs()[static_cast<std::size_t>(digit)]) {
            Seg t{};
            warp(s.x0, s.y0, t.x0, t.y0);
            warp(s.x1, s.y1, t.x1, t.y1);
            segs.push_back(t);
        }

        float* img = out.images.data() + i * kSize * kSize;
        const double aa = 1.0 / static_cast<double>(kBox);  // one-pixel soft edge
        for (i64 r = 0; r < kBox; ++r) {
            for (i64 c = 0; c < kBox; ++c) {
                const double x = (static_cast<double>(c) + 0.5) / kBox;
                const double y = (static_cast<double>(r) + 0.5) / kBox;
                double d = 1e9;
                for (const Seg& s : segs) d = std::min(d, seg_dist(s, x, y));
                const double v = std::clamp((thickness - d) / aa + 0.5, 0.0, 1.0);
                img[(r + kMargin) * kSize + (c + kMargin)] = static_cast<float>(v);
            }
        }
    }
    return out;
}

void write_idx(const LabeledImageSet& s, const std::string& images_path,
               const std::string& labels_path) {
    auto put_be32 = [](std::ostream& os, std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
        os.write(reinterpret_cast<const char*>(b), 4);
    };
    if (s.labels_per != 1) throw ContractError("write_idx: only single-label sets fit the IDX layout");

    std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
    if (!img) throw IoError("cannot open for writing: " + images_path);
    put_be32(img, 0x00000803u);
    put_be32(img, static_cast<std::uint32_t>(s.n));
    put_be32(img, static_cast<std::uint32_t>(s.h));
    put_be32(img, static_cast<std::uint32_t>(s.w));
    std::vector<unsigned char> bytes(s.images.size());
    for (std::size_t i = 0; i < s.images.size(); ++i) {
        const float v = std::clamp(s.images[i], 0.0f, 1.0f);
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    img.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!img) throw IoError("write failed: " + images_path);

    std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
    if (!lab) throw IoError("cannot open for writing: " + labels_path);
    put_be32(lab, 0x00000801u);
    put_be32(lab, static_cast<std::uint32_t>(s.n));
    std::vector<unsigned char> lbytes(static_cast<std::size_t>(s.n));
    for (i64 i = 0; i < s.n; ++i) {
        lbytes[static_cast<std::size_t>(i)] = static_cast<unsigned char>(s.labels[static_cast<std::size_t>(i)]);
    }
    lab.write(reinterpret_cast<const char*>(lbytes.data()), static_cast<std::streamsize>(lbytes.size()));
    if (!lab) throw IoError("write failed: " + labels_path);
}

}  // namespace cstvae
