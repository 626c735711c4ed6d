#pragma once

#include <array>
#include <utility>

#include "cstvae/tensor.hpp"

namespace cstvae {

// |det| at or below this means the transform is treated as singular.
inline constexpr double kSingularDetThreshold = 1e-6;

// 2x3 affine, row-major [a b tx; c d ty], mapping normalized output
// coordinates (x,y) in [-1,1]^2 to normalized source coordinates. Pixel 0
// sits at -1 and pixel n-1 at +1 (align-corners), so the identity transform
// samples exactly on the source pixels.
struct AffineTransform {
    std::array<double, 6> m{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};

    static AffineTransform identity() { return {}; }

    double det() const { return m[0] * m[4] - m[1] * m[3]; }

    // (x_src, y_src) for normalized output coords.
    std::pair<double, double> apply(double x, double y) const {
        return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
    }
};

// Throws SingularTransformError when |det| <= threshold.
AffineTransform invert(const AffineTransform& t);

// Normalized source coordinates per output pixel, as a constant [h x w x 2]
// tensor. Extents below 2 are rejected.
Tensor make_grid(const AffineTransform& t, i64 out_h, i64 out_w);

// Bilinear gather; out-of-bounds source coordinates contribute 0.
// Single image: src [h x w], grid [oh x ow x 2]. Differentiable in both.
Tensor bilinear_sample(const Tensor& src, const Tensor& grid);

// make_grid + bilinear_sample with a fixed transform.
Tensor stn(const Tensor& src, const AffineTransform& t, i64 out_h, i64 out_w);

// ---- batched, differentiable-in-theta variants ----
// theta rows are the 6 affine entries (a, b, tx, c, d, ty).

Tensor affine_grid(const Tensor& theta, i64 out_h, i64 out_w);  // [B,6] -> [B,oh,ow,2]
Tensor grid_sample(const Tensor& src, const Tensor& grid);      // [B,h,w] x [B,oh,ow,2] -> [B,oh,ow]
Tensor affine_invert(const Tensor& theta);                      // [B,6] -> [B,6]
Tensor stn(const Tensor& src, const Tensor& theta, i64 out_h, i64 out_w);

// Per-row determinants of a [B x 6] transform tensor.
std::vector<double> transform_determinants(const Tensor& theta);

}  // namespace cstvae
