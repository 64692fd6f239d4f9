#include "d3t/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace d3t::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::OpenMP};
std::atomic<bool> g_env_read{false};
} // namespace

Backend backend_from_env() {
    const char* e = std::getenv("D3T_KERNELS");
    if (e) {
        std::string s(e);
        if (s == "ref" || s == "reference" || s == "serial") return Backend::Reference;
        if (s == "omp" || s == "openmp") return Backend::OpenMP;
        throw std::runtime_error("D3T_KERNELS must be 'ref' or 'omp', got: " + s);
    }
    return Backend::OpenMP;
}

Backend backend() {
    if (!g_env_read.exchange(true)) g_backend = backend_from_env();
    return g_backend;
}

void set_backend(Backend b) {
    g_env_read = true;
    g_backend = b;
}

int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

// ---------------------------------------------------------------------------
// reference kernels: straight textbook loops, one element at a time
// ---------------------------------------------------------------------------

namespace ref {

void conv2d_fwd(int n, int ci, int h, int w, int co, int k, int pad,
                const float* x, const float* wgt, float* y) {
    const int ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
    for (int b = 0; b < n; ++b)
        for (int oc = 0; oc < co; ++oc)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    float acc = 0.f;
                    for (int ic = 0; ic < ci; ++ic)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                int iy = oy + ky - pad, ix = ox + kx - pad;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += x[((long(b) * ci + ic) * h + iy) * w + ix] *
                                       wgt[((long(oc) * ci + ic) * k + ky) * k + kx];
                            }
                    y[((long(b) * co + oc) * ho + oy) * wo + ox] = acc;
                }
}

void conv2d_dx(int n, int ci, int h, int w, int co, int k, int pad,
               const float* gy, const float* wgt, float* gx) {
    const int ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
    for (int b = 0; b < n; ++b)
        for (int ic = 0; ic < ci; ++ic)
            for (int iy = 0; iy < h; ++iy)
                for (int ix = 0; ix < w; ++ix) {
                    float acc = 0.f;
                    for (int oc = 0; oc < co; ++oc)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                int oy = iy - ky + pad, ox = ix - kx + pad;
                                if (oy < 0 || oy >= ho || ox < 0 || ox >= wo) continue;
                                acc += gy[((long(b) * co + oc) * ho + oy) * wo + ox] *
                                       wgt[((long(oc) * ci + ic) * k + ky) * k + kx];
                            }
                    gx[((long(b) * ci + ic) * h + iy) * w + ix] = acc;
                }
}

void conv2d_dw(int n, int ci, int h, int w, int co, int k, int pad,
               const float* x, const float* gy, float* gw) {
    const int ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
    for (int oc = 0; oc < co; ++oc)
        for (int ic = 0; ic < ci; ++ic)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    float acc = 0.f;
                    for (int b = 0; b < n; ++b)
                        for (int oy = 0; oy < ho; ++oy)
                            for (int ox = 0; ox < wo; ++ox) {
                                int iy = oy + ky - pad, ix = ox + kx - pad;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += x[((long(b) * ci + ic) * h + iy) * w + ix] *
                                       gy[((long(b) * co + oc) * ho + oy) * wo + ox];
                            }
                    gw[((long(oc) * ci + ic) * k + ky) * k + kx] = acc;
                }
}

void matmul(int m, int k, int n, const float* a, const float* b, float* c) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            float acc = 0.f;
            for (int kk = 0; kk < k; ++kk) acc += a[long(i) * k + kk] * b[long(kk) * n + j];
            c[long(i) * n + j] = acc;
        }
}

void avgpool2(int n, int c, int h, int w, const float* x, float* y) {
    const int ho = h / 2, wo = w / 2;
    for (long p = 0; p < long(n) * c; ++p)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                const float* s = x + (p * h + 2 * oy) * w + 2 * ox;
                y[(p * ho + oy) * wo + ox] = 0.25f * (s[0] + s[1] + s[w] + s[w + 1]);
            }
}

void upsample2(int n, int c, int h, int w, const float* x, float* y) {
    const int ho = h * 2, wo = w * 2;
    for (long p = 0; p < long(n) * c; ++p)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox)
                y[(p * ho + oy) * wo + ox] = x[(p * h + oy / 2) * w + ox / 2];
}

} // namespace ref

// ---------------------------------------------------------------------------
// parallel kernels: one thread owns each output element, accumulation order
// over the contraction indices matches the reference loops
// ---------------------------------------------------------------------------

namespace par {

void conv2d_fwd(int n, int ci, int h, int w, int co, int k, int pad,
                const float* x, const float* wgt, float* y) {
    const int ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < n; ++b)
        for (int oc = 0; oc < co; ++oc) {
            float* yp = y + (long(b) * co + oc) * ho * wo;
            std::memset(yp, 0, sizeof(float) * size_t(ho) * wo);
            for (int ic = 0; ic < ci; ++ic) {
                const float* xp = x + (long(b) * ci + ic) * h * w;
                const float* wp = wgt + (long(oc) * ci + ic) * k * k;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const float wv = wp[ky * k + kx];
                        const int oy0 = std::max(0, pad - ky), oy1 = std::min(ho, h + pad - ky);
                        const int ox0 = std::max(0, pad - kx), ox1 = std::min(wo, w + pad - kx);
                        for (int oy = oy0; oy < oy1; ++oy) {
                            const float* xr = xp + (oy + ky - pad) * w + (kx - pad);
                            float* yr = yp + oy * wo;
                            for (int ox = ox0; ox < ox1; ++ox) yr[ox] += wv * xr[ox];
                        }
                    }
            }
        }
}

void conv2d_dx(int n, int ci, int h, int w, int co, int k, int pad,
               const float* gy, const float* wgt, float* gx) {
    const int ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < n; ++b)
        for (int ic = 0; ic < ci; ++ic) {
            float* gp = gx + (long(b) * ci + ic) * h * w;
            std::memset(gp, 0, sizeof(float) * size_t(h) * w);
            for (int oc = 0; oc < co; ++oc) {
                const float* gyp = gy + (long(b) * co + oc) * ho * wo;
                const float* wp = wgt + (long(oc) * ci + ic) * k * k;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const float wv = wp[ky * k + kx];
                        const int iy0 = std::max(0, ky - pad), iy1 = std::min(h, ho + ky - pad);
                        const int ix0 = std::max(0, kx - pad), ix1 = std::min(w, wo + kx - pad);
                        for (int iy = iy0; iy < iy1; ++iy) {
                            const float* gr = gyp + (iy - ky + pad) * wo + (pad - kx);
                            float* gxr = gp + iy * w;
                            for (int ix = ix0; ix < ix1; ++ix) gxr[ix] += wv * gr[ix];
                        }
                    }
            }
        }
}

void conv2d_dw(int n, int ci, int h, int w, int co, int k, int pad,
               const float* x, const float* gy, float* gw) {
    const int ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
#pragma omp parallel for collapse(2) schedule(static)
    for (int oc = 0; oc < co; ++oc)
        for (int ic = 0; ic < ci; ++ic)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    float acc = 0.f;
                    const int oy0 = std::max(0, pad - ky), oy1 = std::min(ho, h + pad - ky);
                    const int ox0 = std::max(0, pad - kx), ox1 = std::min(wo, w + pad - kx);
                    for (int b = 0; b < n; ++b) {
                        const float* xp = x + (long(b) * ci + ic) * h * w;
                        const float* gp = gy + (long(b) * co + oc) * ho * wo;
                        for (int oy = oy0; oy < oy1; ++oy) {
                            const float* xr = xp + (oy + ky - pad) * w + (kx - pad);
                            const float* gr = gp + oy * wo;
                            for (int ox = ox0; ox < ox1; ++ox) acc += xr[ox] * gr[ox];
                        }
                    }
                    gw[((long(oc) * ci + ic) * k + ky) * k + kx] = acc;
                }
}

void matmul(int m, int k, int n, const float* a, const float* b, float* c) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        float* cr = c + long(i) * n;
        std::memset(cr, 0, sizeof(float) * size_t(n));
        for (int kk = 0; kk < k; ++kk) {
            const float av = a[long(i) * k + kk];
            const float* br = b + long(kk) * n;
            for (int j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

void avgpool2(int n, int c, int h, int w, const float* x, float* y) {
    const int ho = h / 2, wo = w / 2;
#pragma omp parallel for schedule(static)
    for (long p = 0; p < long(n) * c; ++p)
        for (int oy = 0; oy < ho; ++oy) {
            const float* s0 = x + (p * h + 2 * oy) * w;
            const float* s1 = s0 + w;
            float* yr = y + (p * ho + oy) * wo;
            for (int ox = 0; ox < wo; ++ox)
                yr[ox] = 0.25f * (s0[2 * ox] + s0[2 * ox + 1] + s1[2 * ox] + s1[2 * ox + 1]);
        }
}

void upsample2(int n, int c, int h, int w, const float* x, float* y) {
    const int wo = w * 2;
#pragma omp parallel for schedule(static)
    for (long p = 0; p < long(n) * c; ++p)
        for (int iy = 0; iy < h; ++iy) {
            const float* xr = x + (p * h + iy) * w;
            float* y0 = y + (p * h + iy) * 2 * wo;
            float* y1 = y0 + wo;
            for (int ix = 0; ix < w; ++ix) {
                const float v = xr[ix];
                y0[2 * ix] = v;
                y0[2 * ix + 1] = v;
                y1[2 * ix] = v;
                y1[2 * ix + 1] = v;
            }
        }
}

} // namespace par

// ---------------------------------------------------------------------------
// dispatched entry points
// ---------------------------------------------------------------------------

#define D3T_DISPATCH(fn, ...)                                                  \
    do {                                                                       \
        if (backend() == Backend::Reference)                                   \
            ref::fn(__VA_ARGS__);                                              \
        else                                                                   \
            par::fn(__VA_ARGS__);                                              \
    } while (0)

void conv2d_fwd(int n, int ci, int h, int w, int co, int k, int pad,
                const float* x, const float* wgt, float* y) {
    D3T_DISPATCH(conv2d_fwd, n, ci, h, w, co, k, pad, x, wgt, y);
}
void conv2d_dx(int n, int ci, int h, int w, int co, int k, int pad,
               const float* gy, const float* wgt, float* gx) {
    D3T_DISPATCH(conv2d_dx, n, ci, h, w, co, k, pad, gy, wgt, gx);
}
void conv2d_dw(int n, int ci, int h, int w, int co, int k, int pad,
               const float* x, const float* gy, float* gw) {
    D3T_DISPATCH(conv2d_dw, n, ci, h, w, co, k, pad, x, gy, gw);
}
void matmul(int m, int k, int n, const float* a, const float* b, float* c) {
    D3T_DISPATCH(matmul, m, k, n, a, b, c);
}
void avgpool2(int n, int c, int h, int w, const float* x, float* y) {
    D3T_DISPATCH(avgpool2, n, c, h, w, x, y);
}
void upsample2(int n, int c, int h, int w, const float* x, float* y) {
    D3T_DISPATCH(upsample2, n, c, h, w, x, y);
}

#undef D3T_DISPATCH

void transpose2d(int m, int n, const float* x, float* y) {
#pragma omp parallel for schedule(static) if (long(m) * n > 1 << 14)
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) y[long(j) * m + i] = x[long(i) * n + j];
}

// ---------------------------------------------------------------------------
// elementwise / reductions / broadcasts
// ---------------------------------------------------------------------------

namespace {
constexpr long kEwParallelCutoff = 1 << 14;
}

#define D3T_EW(expr)                                                           \
    _Pragma("omp parallel for schedule(static) if (n > kEwParallelCutoff)")    \
    for (long i = 0; i < n; ++i) expr

void ew_add(long n, const float* a, const float* b, float* y) { D3T_EW(y[i] = a[i] + b[i]); }
void ew_sub(long n, const float* a, const float* b, float* y) { D3T_EW(y[i] = a[i] - b[i]); }
void ew_mul(long n, const float* a, const float* b, float* y) { D3T_EW(y[i] = a[i] * b[i]); }
void ew_neg(long n, const float* a, float* y) { D3T_EW(y[i] = -a[i]); }
void ew_scale(long n, const float* a, float s, float* y) { D3T_EW(y[i] = a[i] * s); }
void ew_add_scalar(long n, const float* a, float s, float* y) { D3T_EW(y[i] = a[i] + s); }
void ew_exp(long n, const float* a, float* y) { D3T_EW(y[i] = std::exp(a[i])); }
void ew_tanh(long n, const float* a, float* y) { D3T_EW(y[i] = std::tanh(a[i])); }
void ew_rsqrt(long n, const float* a, float eps, float* y) {
    D3T_EW(y[i] = 1.0f / std::sqrt(a[i] + eps));
}
void ew_recip(long n, const float* a, float* y) { D3T_EW(y[i] = 1.0f / a[i]); }
void ew_sqrt(long n, const float* a, float eps, float* y) { D3T_EW(y[i] = std::sqrt(a[i] + eps)); }
void ew_lrelu(long n, const float* a, float slope, float* y) {
    D3T_EW(y[i] = a[i] > 0.f ? a[i] : slope * a[i]);
}
void ew_lrelu_mask(long n, const float* a, float slope, float* mask) {
    D3T_EW(mask[i] = a[i] > 0.f ? 1.f : slope);
}
void ew_clamp(long n, const float* a, float lo, float hi, float* y) {
    D3T_EW(y[i] = std::min(hi, std::max(lo, a[i])));
}
void ew_clamp_mask(long n, const float* a, float lo, float hi, float* mask) {
    D3T_EW(mask[i] = (a[i] > lo && a[i] < hi) ? 1.f : 0.f);
}

#undef D3T_EW

double reduce_sum(long n, const float* x) {
    constexpr long kBlock = 4096;
    const long nb = (n + kBlock - 1) / kBlock;
    std::vector<double> partial(static_cast<size_t>(nb), 0.0);
#pragma omp parallel for schedule(static) if (nb > 4)
    for (long b = 0; b < nb; ++b) {
        double acc = 0.0;
        const long end = std::min(n, (b + 1) * kBlock);
        for (long i = b * kBlock; i < end; ++i) acc += x[i];
        partial[static_cast<size_t>(b)] = acc;
    }
    double total = 0.0;
    for (double v : partial) total += v;
    return total;
}

void sum_spatial(int n, int c, int hw, const float* x, float* y) {
#pragma omp parallel for schedule(static) if (long(n) * c > 8)
    for (long p = 0; p < long(n) * c; ++p) {
        double acc = 0.0;
        const float* s = x + p * hw;
        for (int i = 0; i < hw; ++i) acc += s[i];
        y[p] = static_cast<float>(acc);
    }
}

void bcast_spatial(int n, int c, int hw, const float* v, float* y) {
#pragma omp parallel for schedule(static) if (long(n) * c * hw > kEwParallelCutoff)
    for (long p = 0; p < long(n) * c; ++p) {
        const float val = v[p];
        float* d = y + p * hw;
        for (int i = 0; i < hw; ++i) d[i] = val;
    }
}

void sum_channel(int n, int c, int hw, const float* x, float* y) {
#pragma omp parallel for schedule(static) if (long(n) * hw > kEwParallelCutoff)
    for (int b = 0; b < n; ++b)
        for (int i = 0; i < hw; ++i) {
            double acc = 0.0;
            for (int ch = 0; ch < c; ++ch) acc += x[(long(b) * c + ch) * hw + i];
            y[long(b) * hw + i] = static_cast<float>(acc);
        }
}

void bcast_channel(int n, int c, int hw, const float* v, float* y) {
#pragma omp parallel for schedule(static) if (long(n) * c * hw > kEwParallelCutoff)
    for (long p = 0; p < long(n) * c; ++p) {
        const float* s = v + (p / c) * hw;
        float* d = y + p * hw;
        for (int i = 0; i < hw; ++i) d[i] = s[i];
    }
}

void sum_per_sample(int n, long chw, const float* x, float* y) {
#pragma omp parallel for schedule(static) if (n > 4)
    for (int b = 0; b < n; ++b) {
        double acc = 0.0;
        const float* s = x + b * chw;
        for (long i = 0; i < chw; ++i) acc += s[i];
        y[b] = static_cast<float>(acc);
    }
}

void bcast_per_sample(int n, long chw, const float* v, float* y) {
#pragma omp parallel for schedule(static) if (long(n) * chw > kEwParallelCutoff)
    for (int b = 0; b < n; ++b) {
        const float val = v[b];
        float* d = y + b * chw;
        for (long i = 0; i < chw; ++i) d[i] = val;
    }
}

void sum_axis0(int n, int m, const float* x, float* y) {
#pragma omp parallel for schedule(static) if (m > 64)
    for (int j = 0; j < m; ++j) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += x[long(i) * m + j];
        y[j] = static_cast<float>(acc);
    }
}

void sum_axis1(int n, int m, const float* x, float* y) {
#pragma omp parallel for schedule(static) if (n > 64)
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        const float* r = x + long(i) * m;
        for (int j = 0; j < m; ++j) acc += r[j];
        y[i] = static_cast<float>(acc);
    }
}

void bcast_row(int n, int m, const float* r, float* y) {
#pragma omp parallel for schedule(static) if (long(n) * m > kEwParallelCutoff)
    for (int i = 0; i < n; ++i) std::memcpy(y + long(i) * m, r, sizeof(float) * size_t(m));
}

void bcast_col(int n, int m, const float* c, float* y) {
#pragma omp parallel for schedule(static) if (long(n) * m > kEwParallelCutoff)
    for (int i = 0; i < n; ++i) {
        const float v = c[i];
        float* d = y + long(i) * m;
        for (int j = 0; j < m; ++j) d[j] = v;
    }
}

void translate(int n, int c, int h, int w, const int* dy, const int* dx,
               const float* x, float* y) {
#pragma omp parallel for schedule(static) if (long(n) * c > 8)
    for (long p = 0; p < long(n) * c; ++p) {
        const int b = static_cast<int>(p / c);
        const int sy = dy[b], sx = dx[b];
        const float* xp = x + p * h * w;
        float* yp = y + p * h * w;
        for (int oy = 0; oy < h; ++oy) {
            const int iy = oy - sy;
            float* yr = yp + long(oy) * w;
            if (iy < 0 || iy >= h) {
                std::memset(yr, 0, sizeof(float) * size_t(w));
                continue;
            }
            const float* xr = xp + long(iy) * w;
            for (int ox = 0; ox < w; ++ox) {
                const int ix = ox - sx;
                yr[ox] = (ix < 0 || ix >= w) ? 0.f : xr[ix];
            }
        }
    }
}

} // namespace d3t::kernels
