#pragma once

#include <cstddef>

namespace d3t::kernels {

/// Which kernel set executes the compute-heavy inner loops.
/// Reference = naive serial loops kept as the testing oracle.
/// OpenMP    = parallel kernels; every output element is produced by exactly
///             one thread with a fixed accumulation order, so results do not
///             depend on the thread count.
enum class Backend { Reference, OpenMP };

Backend backend();
void set_backend(Backend b);
/// Reads D3T_KERNELS (ref|omp); called once at startup by backend().
Backend backend_from_env();

int thread_count();

// conv2d family, stride 1. x[n,ci,h,w], wgt[co,ci,k,k], y[n,co,ho,wo]
// with ho = h + 2*pad - k + 1 (same for wo).
void conv2d_fwd(int n, int ci, int h, int w, int co, int k, int pad,
                const float* x, const float* wgt, float* y);
void conv2d_dx(int n, int ci, int h, int w, int co, int k, int pad,
               const float* gy, const float* wgt, float* gx);
void conv2d_dw(int n, int ci, int h, int w, int co, int k, int pad,
               const float* x, const float* gy, float* gw);

// c[m,n] = a[m,k] * b[k,n]
void matmul(int m, int k, int n, const float* a, const float* b, float* c);
void transpose2d(int m, int n, const float* x, float* y);

// 2x2 average pool / nearest-neighbor upsample, spatial dims halve/double.
void avgpool2(int n, int c, int h, int w, const float* x, float* y);
void upsample2(int n, int c, int h, int w, const float* x, float* y);

namespace ref {
void conv2d_fwd(int n, int ci, int h, int w, int co, int k, int pad,
                const float* x, const float* wgt, float* y);
void conv2d_dx(int n, int ci, int h, int w, int co, int k, int pad,
               const float* gy, const float* wgt, float* gx);
void conv2d_dw(int n, int ci, int h, int w, int co, int k, int pad,
               const float* x, const float* gy, float* gw);
void matmul(int m, int k, int n, const float* a, const float* b, float* c);
void avgpool2(int n, int c, int h, int w, const float* x, float* y);
void upsample2(int n, int c, int h, int w, const float* x, float* y);
} // namespace ref

namespace par {
void conv2d_fwd(int n, int ci, int h, int w, int co, int k, int pad,
                const float* x, const float* wgt, float* y);
void conv2d_dx(int n, int ci, int h, int w, int co, int k, int pad,
               const float* gy, const float* wgt, float* gx);
void conv2d_dw(int n, int ci, int h, int w, int co, int k, int pad,
               const float* x, const float* gy, float* gw);
void matmul(int m, int k, int n, const float* a, const float* b, float* c);
void avgpool2(int n, int c, int h, int w, const float* x, float* y);
void upsample2(int n, int c, int h, int w, const float* x, float* y);
} // namespace par

// Elementwise and reduction helpers. Single implementation; parallel over
// independent outputs, reductions are two-phase with a fixed combine order.
void ew_add(long n, const float* a, const float* b, float* y);
void ew_sub(long n, const float* a, const float* b, float* y);
void ew_mul(long n, const float* a, const float* b, float* y);
void ew_neg(long n, const float* a, float* y);
void ew_scale(long n, const float* a, float s, float* y);
void ew_add_scalar(long n, const float* a, float s, float* y);
void ew_exp(long n, const float* a, float* y);
void ew_tanh(long n, const float* a, float* y);
void ew_rsqrt(long n, const float* a, float eps, float* y);
void ew_recip(long n, const float* a, float* y);
void ew_sqrt(long n, const float* a, float eps, float* y);
void ew_lrelu(long n, const float* a, float slope, float* y);
/// mask[i] = 1 if a[i] > 0 else slope
void ew_lrelu_mask(long n, const float* a, float slope, float* mask);
void ew_clamp(long n, const float* a, float lo, float hi, float* y);
void ew_clamp_mask(long n, const float* a, float lo, float hi, float* mask);

double reduce_sum(long n, const float* x);

// x[n,c,h*w] viewed reductions/broadcasts
void sum_spatial(int n, int c, int hw, const float* x, float* y);            // y[n,c]
void bcast_spatial(int n, int c, int hw, const float* v, float* y);          // v[n,c]
void sum_channel(int n, int c, int hw, const float* x, float* y);            // y[n,hw]
void bcast_channel(int n, int c, int hw, const float* v, float* y);          // v[n,hw]
void sum_per_sample(int n, long chw, const float* x, float* y);              // y[n]
void bcast_per_sample(int n, long chw, const float* v, float* y);            // v[n]
void sum_axis0(int n, int m, const float* x, float* y);                      // y[m]
void sum_axis1(int n, int m, const float* x, float* y);                      // y[n]
void bcast_row(int n, int m, const float* r, float* y);                      // r[m] -> y[n,m]
void bcast_col(int n, int m, const float* c, float* y);                      // c[n] -> y[n,m]

/// Integer shift per sample with zero fill; dy/dx arrays of length n.
void translate(int n, int c, int h, int w, const int* dy, const int* dx,
               const float* x, float* y);

} // namespace d3t::kernels
