#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cstvae::kernels {

using i64 = std::int64_t;

// Every kernel has a plain serial implementation (the reference) and an
// OpenMP one. Both accumulate each output element in the same order, so
// results are bit-identical across backends and thread counts; the unit
// tests assert exact equality and tools/kernel_bench compares throughput.
enum class Backend { Serial, OpenMP };

Backend active_backend();
void set_backend(Backend b);
int max_threads();

// Parallel regions are skipped below this element count.
inline constexpr i64 kParallelCutoff = 4096;

// c[m x n] = a[m x k] * b[k x n], or += when accumulate.
void matmul_nn_serial(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate);
void matmul_nn_omp(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate);
void matmul_nn(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate = false);

// c[m x n] = a[k x m]^T * b[k x n], or += when accumulate.
void matmul_tn_serial(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate);
void matmul_tn_omp(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate);
void matmul_tn(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate = false);

// out[n x m] = a[m x n]^T
void transpose_serial(const double* a, double* out, i64 m, i64 n);
void transpose_omp(const double* a, double* out, i64 m, i64 n);
void transpose(const double* a, double* out, i64 m, i64 n);

// Block-structured full sum; identical block boundaries on both backends.
double reduce_sum_serial(const double* x, i64 n);
double reduce_sum_omp(const double* x, i64 n);
double reduce_sum(const double* x, i64 n);

// theta[b x 6] rows (a, b, tx, c, d, ty) map normalized output coords to
// normalized source coords; grid[b x h x w x 2] holds (x_src, y_src) with
// align-corners spacing.
void affine_grid_serial(const double* theta, double* grid, i64 b, i64 h, i64 w);
void affine_grid_omp(const double* theta, double* grid, i64 b, i64 h, i64 w);
void affine_grid(const double* theta, double* grid, i64 b, i64 h, i64 w);

// dtheta[b x 6] += reduction of dgrid[b x h x w x 2] against the grid coords.
void affine_grid_backward_serial(const double* dgrid, double* dtheta, i64 b, i64 h, i64 w);
void affine_grid_backward_omp(const double* dgrid, double* dtheta, i64 b, i64 h, i64 w);
void affine_grid_backward(const double* dgrid, double* dtheta, i64 b, i64 h, i64 w);

// Bilinear gather with zero padding outside the source rectangle.
// src[b x sh x sw], grid[b x h x w x 2] -> out[b x h x w].
void grid_sample_serial(const double* src, const double* grid, double* out,
                        i64 b, i64 sh, i64 sw, i64 h, i64 w);
void grid_sample_omp(const double* src, const double* grid, double* out,
                     i64 b, i64 sh, i64 sw, i64 h, i64 w);
void grid_sample(const double* src, const double* grid, double* out,
                 i64 b, i64 sh, i64 sw, i64 h, i64 w);

// Accumulates into dsrc and/or dgrid (either may be null). Parallel over the
// batch only: the per-example corner scatter stays in program order.
void grid_sample_backward_serial(const double* src, const double* grid, const double* dout,
                                 double* dsrc, double* dgrid,
                                 i64 b, i64 sh, i64 sw, i64 h, i64 w);
void grid_sample_backward_omp(const double* src, const double* grid, const double* dout,
                              double* dsrc, double* dgrid,
                              i64 b, i64 sh, i64 sw, i64 h, i64 w);
void grid_sample_backward(const double* src, const double* grid, const double* dout,
                          double* dsrc, double* dgrid,
                          i64 b, i64 sh, i64 sw, i64 h, i64 w);

// Elementwise driver used by the tensor layer; f(i) must be independent
// across i.
template <class F>
inline void parallel_for(i64 n, F&& f) {
#ifdef _OPENMP
    if (active_backend() == Backend::OpenMP && n >= kParallelCutoff) {
#pragma omp parallel for schedule(static)
        for (i64 i = 0; i < n; ++i) f(i);
        return;
    }
#endif
    for (i64 i = 0; i < n; ++i) f(i);
}

}  // namespace cstvae::kernels
