#include "cstvae/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <vector>

namespace cstvae::kernels {

namespace {

std::atomic<Backend> g_backend{Backend::OpenMP};

// Row workers shared by both backends so per-element accumulation order is
// identical regardless of how rows are scheduled.

inline void matmul_nn_row(const double* __restrict a, const double* __restrict b,
                          double* __restrict c, i64 i, i64 k, i64 n, bool accumulate) {
    double* crow = c + i * n;
    if (!accumulate) {
        for (i64 j = 0; j < n; ++j) crow[j] = 0.0;
    }
    const double* arow = a + i * k;
    for (i64 p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = b + p * n;
        for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

inline void grid_sample_point(const double* src, i64 sh, i64 sw,
                              double gx, double gy, double& out) {
    // Normalized [-1,1] to pixel coords, align-corners.
    const double px = (gx + 1.0) * 0.5 * static_cast<double>(sw - 1);
    const double py = (gy + 1.0) * 0.5 * static_cast<double>(sh - 1);
    const double fx = std::floor(px);
    const double fy = std::floor(py);
    const i64 x0 = static_cast<i64>(fx);
    const i64 y0 = static_cast<i64>(fy);
    const double ax = px - fx;
    const double ay = py - fy;
    auto at = [&](i64 y, i64 x) -> double {
        if (x < 0 || x >= sw || y < 0 || y >= sh) return 0.0;
        return src[y * sw + x];
    };
    const double v00 = at(y0, x0);
    const double v01 = at(y0, x0 + 1);
    const double v10 = at(y0 + 1, x0);
    const double v11 = at(y0 + 1, x0 + 1);
    out = (1.0 - ay) * ((1.0 - ax) * v00 + ax * v01) + ay * ((1.0 - ax) * v10 + ax * v11);
}

inline void grid_sample_example(const double* src, const double* grid, double* out,
                                i64 sh, i64 sw, i64 h, i64 w) {
    for (i64 i = 0; i < h; ++i) {
        for (i64 j = 0; j < w; ++j) {
            const double* g = grid + (i * w + j) * 2;
            grid_sample_point(src, sh, sw, g[0], g[1], out[i * w + j]);
        }
    }
}

inline void grid_sample_backward_example(const double* src, const double* grid,
                                         const double* dout, double* dsrc, double* dgrid,
                                         i64 sh, i64 sw, i64 h, i64 w) {
    const double sx = 0.5 * static_cast<double>(sw - 1);
    const double sy = 0.5 * static_cast<double>(sh - 1);
    for (i64 i = 0; i < h; ++i) {
        for (i64 j = 0; j < w; ++j) {
            const double go = dout[i * w + j];
            const double* g = grid + (i * w + j) * 2;
            const double px = (g[0] + 1.0) * sx;
            const double py = (g[1] + 1.0) * sy;
            const double fx = std::floor(px);
            const double fy = std::floor(py);
            const i64 x0 = static_cast<i64>(fx);
            const i64 y0 = static_cast<i64>(fy);
            const double ax = px - fx;
            const double ay = py - fy;
            auto inside = [&](i64 y, i64 x) { return x >= 0 && x < sw && y >= 0 && y < sh; };
            auto val = [&](i64 y, i64 x) -> double { return inside(y, x) ? src[y * sw + x] : 0.0; };
            const double v00 = val(y0, x0);
            const double v01 = val(y0, x0 + 1);
            const double v10 = val(y0 + 1, x0);
            const double v11 = val(y0 + 1, x0 + 1);
            if (dsrc != nullptr) {
                if (inside(y0, x0)) dsrc[y0 * sw + x0] += go * (1.0 - ay) * (1.0 - ax);
                if (inside(y0, x0 + 1)) dsrc[y0 * sw + x0 + 1] += go * (1.0 - ay) * ax;
                if (inside(y0 + 1, x0)) dsrc[(y0 + 1) * sw + x0] += go * ay * (1.0 - ax);
                if (inside(y0 + 1, x0 + 1)) dsrc[(y0 + 1) * sw + x0 + 1] += go * ay * ax;
            }
            if (dgrid != nullptr) {
                const double dpx = (1.0 - ay) * (v01 - v00) + ay * (v11 - v10);
                const double dpy = (1.0 - ax) * (v10 - v00) + ax * (v11 - v01);
                dgrid[(i * w + j) * 2 + 0] += go * dpx * sx;
                dgrid[(i * w + j) * 2 + 1] += go * dpy * sy;
            }
        }
    }
}

inline void affine_grid_example(const double* t, double* grid, i64 h, i64 w) {
    const double ih = h > 1 ? 2.0 / static_cast<double>(h - 1) : 0.0;
    const double iw = w > 1 ? 2.0 / static_cast<double>(w - 1) : 0.0;
    for (i64 i = 0; i < h; ++i) {
        const double yn = -1.0 + ih * static_cast<double>(i);
        for (i64 j = 0; j < w; ++j) {
            const double xn = -1.0 + iw * static_cast<double>(j);
            double* g = grid + (i * w + j) * 2;
            g[0] = t[0] * xn + t[1] * yn + t[2];
            g[1] = t[3] * xn + t[4] * yn + t[5];
        }
    }
}

inline void affine_grid_backward_example(const double* dgrid, double* dt, i64 h, i64 w) {
    const double ih = h > 1 ? 2.0 / static_cast<double>(h - 1) : 0.0;
    const double iw = w > 1 ? 2.0 / static_cast<double>(w - 1) : 0.0;
    for (i64 i = 0; i < h; ++i) {
        const double yn = -1.0 + ih * static_cast<double>(i);
        for (i64 j = 0; j < w; ++j) {
            const double xn = -1.0 + iw * static_cast<double>(j);
            const double gx = dgrid[(i * w + j) * 2 + 0];
            const double gy = dgrid[(i * w + j) * 2 + 1];
            dt[0] += gx * xn;
            dt[1] += gx * yn;
            dt[2] += gx;
            dt[3] += gy * xn;
            dt[4] += gy * yn;
            dt[5] += gy;
        }
    }
}

constexpr i64 kSumBlock = 4096;

}  // namespace

Backend active_backend() { return g_backend.load(std::memory_order_relaxed); }
void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void matmul_nn_serial(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate) {
    for (i64 i = 0; i < m; ++i) matmul_nn_row(a, b, c, i, k, n, accumulate);
}

void matmul_nn_omp(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * n >= kParallelCutoff)
    for (i64 i = 0; i < m; ++i) matmul_nn_row(a, b, c, i, k, n, accumulate);
}

void matmul_nn(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate) {
    if (active_backend() == Backend::OpenMP) {
        matmul_nn_omp(a, b, c, m, k, n, accumulate);
    } else {
        matmul_nn_serial(a, b, c, m, k, n, accumulate);
    }
}

void matmul_tn_serial(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate) {
    for (i64 i = 0; i < m; ++i) {
        // Column i of a[k x m] viewed with stride m.
        double* crow = c + i * n;
        if (!accumulate) {
            for (i64 j = 0; j < n; ++j) crow[j] = 0.0;
        }
        for (i64 p = 0; p < k; ++p) {
            const double av = a[p * m + i];
            const double* brow = b + p * n;
            for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_tn_omp(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * n >= kParallelCutoff)
    for (i64 i = 0; i < m; ++i) {
        double* crow = c + i * n;
        if (!accumulate) {
            for (i64 j = 0; j < n; ++j) crow[j] = 0.0;
        }
        for (i64 p = 0; p < k; ++p) {
            const double av = a[p * m + i];
            const double* brow = b + p * n;
            for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate) {
    if (active_backend() == Backend::OpenMP) {
        matmul_tn_omp(a, b, c, m, k, n, accumulate);
    } else {
        matmul_tn_serial(a, b, c, m, k, n, accumulate);
    }
}

void transpose_serial(const double* a, double* out, i64 m, i64 n) {
    constexpr i64 kBlock = 32;
    for (i64 ib = 0; ib < m; ib += kBlock) {
        const i64 ie = std::min(ib + kBlock, m);
        for (i64 jb = 0; jb < n; jb += kBlock) {
            const i64 je = std::min(jb + kBlock, n);
            for (i64 i = ib; i < ie; ++i)
                for (i64 j = jb; j < je; ++j) out[j * m + i] = a[i * n + j];
        }
    }
}

void transpose_omp(const double* a, double* out, i64 m, i64 n) {
    constexpr i64 kBlock = 32;
    const i64 nib = (m + kBlock - 1) / kBlock;
#pragma omp parallel for schedule(static) if (m * n >= kParallelCutoff)
    for (i64 bi = 0; bi < nib; ++bi) {
        const i64 ib = bi * kBlock;
        const i64 ie = std::min(ib + kBlock, m);
        for (i64 jb = 0; jb < n; jb += kBlock) {
            const i64 je = std::min(jb + kBlock, n);
            for (i64 i = ib; i < ie; ++i)
                for (i64 j = jb; j < je; ++j) out[j * m + i] = a[i * n + j];
        }
    }
}

void transpose(const double* a, double* out, i64 m, i64 n) {
    if (active_backend() == Backend::OpenMP) {
        transpose_omp(a, out, m, n);
    } else {
        transpose_serial(a, out, m, n);
    }
}

double reduce_sum_serial(const double* x, i64 n) {
    const i64 nblocks = (n + kSumBlock - 1) / kSumBlock;
    double total = 0.0;
    for (i64 blk = 0; blk < nblocks; ++blk) {
        const i64 lo = blk * kSumBlock;
        const i64 hi = std::min(lo + kSumBlock, n);
        double s = 0.0;
        for (i64 i = lo; i < hi; ++i) s += x[i];
        total += s;
    }
    return total;
}

double reduce_sum_omp(const double* x, i64 n) {
    const i64 nblocks = (n + kSumBlock - 1) / kSumBlock;
    if (nblocks <= 1) return reduce_sum_serial(x, n);
    std::vector<double> partial(static_cast<std::size_t>(nblocks), 0.0);
#pragma omp parallel for schedule(static)
    for (i64 blk = 0; blk < nblocks; ++blk) {
        const i64 lo = blk * kSumBlock;
        const i64 hi = std::min(lo + kSumBlock, n);
        double s = 0.0;
        for (i64 i = lo; i < hi; ++i) s += x[i];
        partial[static_cast<std::size_t>(blk)] = s;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

double reduce_sum(const double* x, i64 n) {
    if (active_backend() == Backend::OpenMP) return reduce_sum_omp(x, n);
    return reduce_sum_serial(x, n);
}

void affine_grid_serial(const double* theta, double* grid, i64 b, i64 h, i64 w) {
    for (i64 e = 0; e < b; ++e) affine_grid_example(theta + e * 6, grid + e * h * w * 2, h, w);
}

void affine_grid_omp(const double* theta, double* grid, i64 b, i64 h, i64 w) {
#pragma omp parallel for schedule(static) if (b * h * w >= kParallelCutoff)
    for (i64 e = 0; e < b; ++e) affine_grid_example(theta + e * 6, grid + e * h * w * 2, h, w);
}

void affine_grid(const double* theta, double* grid, i64 b, i64 h, i64 w) {
    if (active_backend() == Backend::OpenMP) {
        affine_grid_omp(theta, grid, b, h, w);
    } else {
        affine_grid_serial(theta, grid, b, h, w);
    }
}

void affine_grid_backward_serial(const double* dgrid, double* dtheta, i64 b, i64 h, i64 w) {
    for (i64 e = 0; e < b; ++e) affine_grid_backward_example(dgrid + e * h * w * 2, dtheta + e * 6, h, w);
}

void affine_grid_backward_omp(const double* dgrid, double* dtheta, i64 b, i64 h, i64 w) {
#pragma omp parallel for schedule(static) if (b * h * w >= kParallelCutoff)
    for (i64 e = 0; e < b; ++e) affine_grid_backward_example(dgrid + e * h * w * 2, dtheta + e * 6, h, w);
}

void affine_grid_backward(const double* dgrid, double* dtheta, i64 b, i64 h, i64 w) {
    if (active_backend() == Backend::OpenMP) {
        affine_grid_backward_omp(dgrid, dtheta, b, h, w);
    } else {
        affine_grid_backward_serial(dgrid, dtheta, b, h, w);
    }
}

void grid_sample_serial(const double* src, const double* grid, double* out,
                        i64 b, i64 sh, i64 sw, i64 h, i64 w) {
    for (i64 e = 0; e < b; ++e) {
        grid_sample_example(src + e * sh * sw, grid + e * h * w * 2, out + e * h * w, sh, sw, h, w);
    }
}

void grid_sample_omp(const double* src, const double* grid, double* out,
                     i64 b, i64 sh, i64 sw, i64 h, i64 w) {
#pragma omp parallel for schedule(static) if (b * h * w >= kParallelCutoff)
    for (i64 e = 0; e < b; ++e) {
        grid_sample_example(src + e * sh * sw, grid + e * h * w * 2, out + e * h * w, sh, sw, h, w);
    }
}

void grid_sample(const double* src, const double* grid, double* out,
                 i64 b, i64 sh, i64 sw, i64 h, i64 w) {
    if (active_backend() == Backend::OpenMP) {
        grid_sample_omp(src, grid, out, b, sh, sw, h, w);
    } else {
        grid_sample_serial(src, grid, out, b, sh, sw, h, w);
    }
}

void grid_sample_backward_serial(const double* src, const double* grid, const double* dout,
                                 double* dsrc, double* dgrid,
                                 i64 b, i64 sh, i64 sw, i64 h, i64 w) {
    for (i64 e = 0; e < b; ++e) {
        grid_sample_backward_example(src + e * sh * sw, grid + e * h * w * 2, dout + e * h * w,
                                     dsrc != nullptr ? dsrc + e * sh * sw : nullptr,
                                     dgrid != nullptr ? dgrid + e * h * w * 2 : nullptr,
                                     sh, sw, h, w);
    }
}

void grid_sample_backward_omp(const double* src, const double* grid, const double* dout,
                              double* dsrc, double* dgrid,
                              i64 b, i64 sh, i64 sw, i64 h, i64 w) {
#pragma omp parallel for schedule(static) if (b * h * w >= kParallelCutoff)
    for (i64 e = 0; e < b; ++e) {
        grid_sample_backward_example(src + e * sh * sw, grid + e * h * w * 2, dout + e * h * w,
                                     dsrc != nullptr ? dsrc + e * sh * sw : nullptr,
                                     dgrid != nullptr ? dgrid + e * h * w * 2 : nullptr,
                                     sh, sw, h, w);
    }
}

void grid_sample_backward(const double* src, const double* grid, const double* dout,
                          double* dsrc, double* dgrid,
                          i64 b, i64 sh, i64 sw, i64 h, i64 w) {
    if (active_backend() == Backend::OpenMP) {
        grid_sample_backward_omp(src, grid, dout, dsrc, dgrid, b, sh, sw, h, w);
    } else {
        grid_sample_backward_serial(src, grid, dout, dsrc, dgrid, b, sh, sw, h, w);
    }
}

}  // namespace cstvae::kernels
