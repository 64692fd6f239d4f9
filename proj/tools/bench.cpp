#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "d3t/kernels.hpp"
#include "d3t/rng.hpp"
#include "d3t/tensor.hpp"

namespace {

using d3t::Rng;
using d3t::Tensor;
namespace k = d3t::kernels;

double time_ms(const std::function<void()>& fn, int repeats) {
    fn(); // warm-up
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < repeats; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeats;
}

void report(const char* name, const std::function<void()>& ref_fn,
            const std::function<void()>& par_fn, int repeats) {
    const double tr = time_ms(ref_fn, repeats);
    const double tp = time_ms(par_fn, repeats);
    std::printf("%-14s reference %8.3f ms   openmp %8.3f ms   speedup %.2fx\n", name, tr, tp,
                tr / tp);
}

} // namespace

int main() {
    std::printf("kernel benchmark, %d thread(s)\n", k::thread_count());

    const int n = 16, ci = 32, h = 32, w = 32, co = 64, kk = 3, pad = 1;
    Tensor x = d3t::randn({n, ci, h, w}, Rng(1));
    Tensor wgt = d3t::randn({co, ci, kk, kk}, Rng(2));
    Tensor y({n, co, h, w});
    Tensor gx({n, ci, h, w}), gw({co, ci, kk, kk});

    report("conv2d_fwd",
           [&] { k::ref::conv2d_fwd(n, ci, h, w, co, kk, pad, x.ptr(), wgt.ptr(), y.ptr()); },
           [&] { k::par::conv2d_fwd(n, ci, h, w, co, kk, pad, x.ptr(), wgt.ptr(), y.ptr()); }, 5);
    report("conv2d_dx",
           [&] { k::ref::conv2d_dx(n, ci, h, w, co, kk, pad, y.ptr(), wgt.ptr(), gx.ptr()); },
           [&] { k::par::conv2d_dx(n, ci, h, w, co, kk, pad, y.ptr(), wgt.ptr(), gx.ptr()); }, 5);
    report("conv2d_dw",
           [&] { k::ref::conv2d_dw(n, ci, h, w, co, kk, pad, x.ptr(), y.ptr(), gw.ptr()); },
           [&] { k::par::conv2d_dw(n, ci, h, w, co, kk, pad, x.ptr(), y.ptr(), gw.ptr()); }, 5);

    const int m = 384, kd = 384, nn = 384;
    Tensor a = d3t::randn({m, kd}, Rng(3)), b = d3t::randn({kd, nn}, Rng(4)), c({m, nn});
    report("matmul", [&] { k::ref::matmul(m, kd, nn, a.ptr(), b.ptr(), c.ptr()); },
           [&] { k::par::matmul(m, kd, nn, a.ptr(), b.ptr(), c.ptr()); }, 5);

    Tensor pin = d3t::randn({n, co, h, w}, Rng(5));
    Tensor pout({n, co, h / 2, w / 2}), uout({n, co, h * 2, w * 2});
    report("avgpool2", [&] { k::ref::avgpool2(n, co, h, w, pin.ptr(), pout.ptr()); },
           [&] { k::par::avgpool2(n, co, h, w, pin.ptr(), pout.ptr()); }, 20);
    report("upsample2", [&] { k::ref::upsample2(n, co, h, w, pin.ptr(), uout.ptr()); },
           [&] { k::par::upsample2(n, co, h, w, pin.ptr(), uout.ptr()); }, 20);
    return 0;
}
