#include "d3t/autodiff.hpp"

#include <cstring>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "d3t/kernels.hpp"

namespace d3t::ad {

namespace K = d3t::kernels;

Var Var::leaf(Tensor t) {
    auto d = std::make_shared<VarData>();
    d->value = std::move(t);
    d->requires_grad = true;
    return Var(std::move(d));
}

Var Var::constant(Tensor t) {
    auto d = std::make_shared<VarData>();
    d->value = std::move(t);
    return Var(std::move(d));
}

const Tensor& Var::value() const {
    if (!d_) throw std::runtime_error("Var: use of undefined variable");
    return d_->value;
}

const std::vector<int>& Var::shape() const { return value().shape; }
long Var::numel() const { return value().numel(); }

float Var::scalar() const {
    const Tensor& t = value();
    if (t.numel() != 1) throw std::runtime_error("Var::scalar: tensor has " + t.shape_str());
    return t[0];
}

bool Var::requires_grad() const { return d_ && d_->requires_grad; }

namespace {

[[noreturn]] void fail(const char* op, const std::string& msg) {
    throw std::runtime_error(std::string(op) + ": " + msg);
}

void need(const Var& v, const char* op) {
    if (!v.defined()) fail(op, "undefined input");
}

bool any_rg(const std::vector<Var>& ins) {
    for (const auto& v : ins)
        if (v.requires_grad()) return true;
    return false;
}

using Backward = std::function<std::vector<Var>(const Var&, unsigned)>;
using BackwardO = std::function<std::vector<Var>(const Var& y, const Var& gy, unsigned)>;

Var make(const char* op, const std::vector<Var>& ins, Tensor val, Backward bwd) {
    for (const auto& v : ins) need(v, op);
    auto d = std::make_shared<VarData>();
    d->value = std::move(val);
    if (any_rg(ins)) {
        d->requires_grad = true;
        auto node = std::make_shared<Node>();
        node->op = op;
        for (const auto& v : ins) node->inputs.push_back(v.data());
        node->backward = std::move(bwd);
        d->producer = std::move(node);
    }
    return Var(std::move(d));
}

/// Variant whose backward needs the op's own output.  The closure holds a
/// weak reference to it; a strong one would make the graph cyclic.
Var make_o(const char* op, const std::vector<Var>& ins, Tensor val, BackwardO bwd) {
    for (const auto& v : ins) need(v, op);
    auto d = std::make_shared<VarData>();
    d->value = std::move(val);
    if (any_rg(ins)) {
        d->requires_grad = true;
        auto node = std::make_shared<Node>();
        node->op = op;
        for (const auto& v : ins) node->inputs.push_back(v.data());
        std::weak_ptr<VarData> wout = d;
        node->backward = [op, wout, bwd = std::move(bwd)](const Var& gy, unsigned wants) {
            auto out = wout.lock();
            if (!out) fail(op, "output freed before backward");
            return bwd(Var(std::move(out)), gy, wants);
        };
        d->producer = std::move(node);
    }
    return Var(std::move(d));
}

void check_same_shape(const char* op, const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value()))
        fail(op, "shape mismatch " + a.value().shape_str() + " vs " + b.value().shape_str());
}

void check_rank(const char* op, const Var& a, int r) {
    if (a.value().rank() != r)
        fail(op, "expected rank " + std::to_string(r) + ", got " + a.value().shape_str());
}

} // namespace

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    check_same_shape("add", a, b);
    Tensor y(a.shape());
    K::ew_add(a.numel(), a.value().ptr(), b.value().ptr(), y.ptr());
    return make("add", {a, b}, std::move(y), [](const Var& gy, unsigned) {
        return std::vector<Var>{gy, gy};
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape("sub", a, b);
    Tensor y(a.shape());
    K::ew_sub(a.numel(), a.value().ptr(), b.value().ptr(), y.ptr());
    return make("sub", {a, b}, std::move(y), [](const Var& gy, unsigned wants) {
        std::vector<Var> g(2);
        if (wants & 1u) g[0] = gy;
        if (wants & 2u) g[1] = neg(gy);
        return g;
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape("mul", a, b);
    Tensor y(a.shape());
    K::ew_mul(a.numel(), a.value().ptr(), b.value().ptr(), y.ptr());
    return make("mul", {a, b}, std::move(y), [a, b](const Var& gy, unsigned wants) {
        std::vector<Var> g(2);
        if (wants & 1u) g[0] = mul(gy, b);
        if (wants & 2u) g[1] = mul(gy, a);
        return g;
    });
}

Var neg(const Var& a) {
    Tensor y(a.shape());
    K::ew_neg(a.numel(), a.value().ptr(), y.ptr());
    return make("neg", {a}, std::move(y), [](const Var& gy, unsigned) {
        return std::vector<Var>{neg(gy)};
    });
}

Var mul_scalar(const Var& a, float s) {
    Tensor y(a.shape());
    K::ew_scale(a.numel(), a.value().ptr(), s, y.ptr());
    return make("mul_scalar", {a}, std::move(y), [s](const Var& gy, unsigned) {
        return std::vector<Var>{mul_scalar(gy, s)};
    });
}

Var add_scalar(const Var& a, float s) {
    Tensor y(a.shape());
    K::ew_add_scalar(a.numel(), a.value().ptr(), s, y.ptr());
    return make("add_scalar", {a}, std::move(y), [](const Var& gy, unsigned) {
        return std::vector<Var>{gy};
    });
}

Var exp_(const Var& a) {
    Tensor t(a.shape());
    K::ew_exp(a.numel(), a.value().ptr(), t.ptr());
    return make_o("exp", {a}, std::move(t), [](const Var& y, const Var& gy, unsigned) {
        return std::vector<Var>{mul(gy, y)};
    });
}

Var tanh_(const Var& a) {
    Tensor t(a.shape());
    K::ew_tanh(a.numel(), a.value().ptr(), t.ptr());
    return make_o("tanh", {a}, std::move(t), [](const Var& y, const Var& gy, unsigned) {
        // d tanh = 1 - y^2
        return std::vector<Var>{mul(gy, add_scalar(neg(mul(y, y)), 1.f))};
    });
}

Var rsqrt(const Var& a, float eps) {
    Tensor t(a.shape());
    K::ew_rsqrt(a.numel(), a.value().ptr(), eps, t.ptr());
    return make_o("rsqrt", {a}, std::move(t), [](const Var& y, const Var& gy, unsigned) {
        // d (a+eps)^(-1/2) = -y^3 / 2
        return std::vector<Var>{mul_scalar(mul(gy, mul(mul(y, y), y)), -0.5f)};
    });
}

Var sqrtp(const Var& a, float eps) {
    Tensor t(a.shape());
    K::ew_sqrt(a.numel(), a.value().ptr(), eps, t.ptr());
    return make_o("sqrtp", {a}, std::move(t), [](const Var& y, const Var& gy, unsigned) {
        return std::vector<Var>{mul_scalar(mul(gy, recip(y)), 0.5f)};
    });
}

Var recip(const Var& a) {
    Tensor t(a.shape());
    K::ew_recip(a.numel(), a.value().ptr(), t.ptr());
    return make_o("recip", {a}, std::move(t), [](const Var& y, const Var& gy, unsigned) {
        return std::vector<Var>{neg(mul(gy, mul(y, y)))};
    });
}

Var lrelu(const Var& a, float slope) {
    Tensor y(a.shape());
    K::ew_lrelu(a.numel(), a.value().ptr(), slope, y.ptr());
    Tensor m(a.shape());
    K::ew_lrelu_mask(a.numel(), a.value().ptr(), slope, m.ptr());
    Var mask = Var::constant(std::move(m));
    return make("lrelu", {a}, std::move(y), [mask](const Var& gy, unsigned) {
        return std::vector<Var>{mul(gy, mask)};
    });
}

Var clamp(const Var& a, float lo, float hi) {
    Tensor y(a.shape());
    K::ew_clamp(a.numel(), a.value().ptr(), lo, hi, y.ptr());
    Tensor m(a.shape());
    K::ew_clamp_mask(a.numel(), a.value().ptr(), lo, hi, m.ptr());
    Var mask = Var::constant(std::move(m));
    return make("clamp", {a}, std::move(y), [mask](const Var& gy, unsigned) {
        return std::vector<Var>{mul(gy, mask)};
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    check_rank("matmul", a, 2);
    check_rank("matmul", b, 2);
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k)
        fail("matmul", "inner dims " + a.value().shape_str() + " x " + b.value().shape_str());
    Tensor y({m, n});
    K::matmul(m, k, n, a.value().ptr(), b.value().ptr(), y.ptr());
    return make("matmul", {a, b}, std::move(y), [a, b](const Var& gy, unsigned wants) {
        std::vector<Var> g(2);
        if (wants & 1u) g[0] = matmul(gy, transpose2(b));
        if (wants & 2u) g[1] = matmul(transpose2(a), gy);
        return g;
    });
}

Var transpose2(const Var& a) {
    check_rank("transpose2", a, 2);
    const int m = a.shape()[0], n = a.shape()[1];
    Tensor y({n, m});
    K::transpose2d(m, n, a.value().ptr(), y.ptr());
    return make("transpose2", {a}, std::move(y), [](const Var& gy, unsigned) {
        return std::vector<Var>{transpose2(gy)};
    });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace {
void check_conv(const char* op, const Var& x, const Var& w, int pad, int* n, int* ci, int* h,
                int* wd, int* co, int* k, int* ho, int* wo) {
    check_rank(op, x, 4);
    check_rank(op, w, 4);
    *n = x.shape()[0]; *ci = x.shape()[1]; *h = x.shape()[2]; *wd = x.shape()[3];
    *co = w.shape()[0]; *k = w.shape()[2];
    if (w.shape()[1] != *ci || w.shape()[3] != *k)
        fail(op, "weight " + w.value().shape_str() + " does not match input " +
                 x.value().shape_str());
    *ho = *h + 2 * pad - *k + 1;
    *wo = *wd + 2 * pad - *k + 1;
    if (*ho <= 0 || *wo <= 0) fail(op, "kernel larger than padded input");
}
} // namespace

Var conv2d(const Var& x, const Var& w, int pad) {
    int n, ci, h, wd, co, k, ho, wo;
    check_conv("conv2d", x, w, pad, &n, &ci, &h, &wd, &co, &k, &ho, &wo);
    Tensor y({n, co, ho, wo});
    K::conv2d_fwd(n, ci, h, wd, co, k, pad, x.value().ptr(), w.value().ptr(), y.ptr());
    return make("conv2d", {x, w}, std::move(y), [x, w, pad, h, wd, k](const Var& gy, unsigned wants) {
        std::vector<Var> g(2);
        if (wants & 1u) g[0] = conv2d_dx_op(gy, w, pad, h, wd);
        if (wants & 2u) g[1] = conv2d_dw_op(x, gy, k, pad);
        return g;
    });
}

Var conv2d_dx_op(const Var& gy, const Var& w, int pad, int h, int wdt) {
    check_rank("conv2d_dx", gy, 4);
    check_rank("conv2d_dx", w, 4);
    const int n = gy.shape()[0], co = gy.shape()[1], ho = gy.shape()[2], wo = gy.shape()[3];
    const int ci = w.shape()[1], k = w.shape()[2];
    if (w.shape()[0] != co || w.shape()[3] != k)
        fail("conv2d_dx", "weight " + w.value().shape_str() + " vs grad " + gy.value().shape_str());
    if (ho != h + 2 * pad - k + 1 || wo != wdt + 2 * pad - k + 1)
        fail("conv2d_dx", "grad spatial dims inconsistent with target size");
    Tensor y({n, ci, h, wdt});
    K::conv2d_dx(n, ci, h, wdt, co, k, pad, gy.value().ptr(), w.value().ptr(), y.ptr());
    return make("conv2d_dx", {gy, w}, std::move(y), [gy, w, pad, k](const Var& hv, unsigned wants) {
        std::vector<Var> g(2);
        if (wants & 1u) g[0] = conv2d(hv, w, pad);
        if (wants & 2u) g[1] = conv2d_dw_op(hv, gy, k, pad);
        return g;
    });
}

Var conv2d_dw_op(const Var& x, const Var& gy, int k, int pad) {
    check_rank("conv2d_dw", x, 4);
    check_rank("conv2d_dw", gy, 4);
    const int n = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
    const int co = gy.shape()[1], ho = gy.shape()[2], wo = gy.shape()[3];
    if (gy.shape()[0] != n) fail("conv2d_dw", "batch mismatch");
    if (ho != h + 2 * pad - k + 1 || wo != wd + 2 * pad - k + 1)
        fail("conv2d_dw", "grad spatial dims inconsistent with input");
    Tensor y({co, ci, k, k});
    K::conv2d_dw(n, ci, h, wd, co, k, pad, x.value().ptr(), gy.value().ptr(), y.ptr());
    return make("conv2d_dw", {x, gy}, std::move(y),
                [x, gy, pad, h, wd](const Var& hv, unsigned wants) {
                    std::vector<Var> g(2);
                    if (wants & 1u) g[0] = conv2d_dx_op(gy, hv, pad, h, wd);
                    if (wants & 2u) g[1] = conv2d(x, hv, pad);
                    return g;
                });
}

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

Var avgpool2(const Var& x) {
    check_rank("avgpool2", x, 4);
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (h % 2 || w % 2) fail("avgpool2", "odd spatial size " + x.value().shape_str());
    Tensor y({n, c, h / 2, w / 2});
    K::avgpool2(n, c, h, w, x.value().ptr(), y.ptr());
    return make("avgpool2", {x}, std::move(y), [](const Var& gy, unsigned) {
        return std::vector<Var>{mul_scalar(upsample2(gy), 0.25f)};
    });
}

Var upsample2(const Var& x) {
    check_rank("upsample2", x, 4);
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    Tensor y({n, c, h * 2, w * 2});
    K::upsample2(n, c, h, w, x.value().ptr(), y.ptr());
    return make("upsample2", {x}, std::move(y), [](const Var& gy, unsigned) {
        return std::vector<Var>{mul_scalar(avgpool2(gy), 4.f)};
    });
}

Var translate_np(const Var& x, std::vector<int> dy, std::vector<int> dx) {
    check_rank("translate", x, 4);
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (static_cast<int>(dy.size()) != n || static_cast<int>(dx.size()) != n)
        fail("translate", "need one shift per sample");
    Tensor y({n, c, h, w});
    K::translate(n, c, h, w, dy.data(), dx.data(), x.value().ptr(), y.ptr());
    return make("translate", {x}, std::move(y),
                [dy = std::move(dy), dx = std::move(dx)](const Var& gy, unsigned) {
                    std::vector<int> ndy(dy.size()), ndx(dx.size());
                    for (size_t i = 0; i < dy.size(); ++i) { ndy[i] = -dy[i]; ndx[i] = -dx[i]; }
                    return std::vector<Var>{translate_np(gy, std::move(ndy), std::move(ndx))};
                });
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

Var reshape(const Var& a, std::vector<int> shape) {
    if (Tensor::count(shape) != a.numel())
        fail("reshape", a.value().shape_str() + " to incompatible target");
    Tensor y = a.value();
    y.shape = shape;
    std::vector<int> orig = a.shape();
    return make("reshape", {a}, std::move(y), [orig = std::move(orig)](const Var& gy, unsigned) {
        return std::vector<Var>{reshape(gy, orig)};
    });
}

Var repeat_batch(const Var& a, int n) {
    if (n <= 0) fail("repeat_batch", "nonpositive count");
    const long m = a.numel();
    std::vector<int> oshape;
    oshape.push_back(n);
    for (int d : a.shape()) oshape.push_back(d);
    Tensor y(oshape);
    for (int i = 0; i < n; ++i)
        std::memcpy(y.ptr() + i * m, a.value().ptr(), sizeof(float) * static_cast<size_t>(m));
    std::vector<int> orig = a.shape();
    return make("repeat_batch", {a}, std::move(y),
                [n, m, orig = std::move(orig)](const Var& gy, unsigned) {
                    Var flat = reshape(gy, {n, static_cast<int>(m)});
                    return std::vector<Var>{reshape(sum_axis0(flat), orig)};
                });
}

Var detach(const Var& a) { return Var::constant(a.value()); }

// ---------------------------------------------------------------------------
// reductions and broadcast adjoints
// ---------------------------------------------------------------------------

Var sum_all(const Var& a) {
    Tensor y = Tensor::scalar(static_cast<float>(K::reduce_sum(a.numel(), a.value().ptr())));
    std::vector<int> orig = a.shape();
    const long m = a.numel();
    return make("sum_all", {a}, std::move(y), [orig = std::move(orig), m](const Var& gy, unsigned) {
        Var flat = bcast_per_sample(gy, {1, static_cast<int>(m)});
        return std::vector<Var>{reshape(flat, orig)};
    });
}

Var sum_spatial(const Var& a) {
    check_rank("sum_spatial", a, 4);
    const int n = a.shape()[0], c = a.shape()[1], h = a.shape()[2], w = a.shape()[3];
    Tensor y({n, c});
    K::sum_spatial(n, c, h * w, a.value().ptr(), y.ptr());
    return make("sum_spatial", {a}, std::move(y), [h, w](const Var& gy, unsigned) {
        return std::vector<Var>{bcast_spatial(gy, h, w)};
    });
}

Var bcast_spatial(const Var& v, int h, int w) {
    check_rank("bcast_spatial", v, 2);
    const int n = v.shape()[0], c = v.shape()[1];
    Tensor y({n, c, h, w});
    K::bcast_spatial(n, c, h * w, v.value().ptr(), y.ptr());
    return make("bcast_spatial", {v}, std::move(y), [](const Var& gy, unsigned) {
        return std::vector<Var>{sum_spatial(gy)};
    });
}

Var sum_channel(const Var& a) {
    check_rank("sum_channel", a, 4);
    const int n = a.shape()[0], c = a.shape()[1], h = a.shape()[2], w = a.shape()[3];
    Tensor y({n, 1, h, w});
    K::sum_channel(n, c, h * w, a.value().ptr(), y.ptr());
    return make("sum_channel", {a}, std::move(y), [c](const Var& gy, unsigned) {
        return std::vector<Var>{bcast_channel(gy, c)};
    });
}

Var bcast_channel(const Var& v, int c) {
    check_rank("bcast_channel", v, 4);
    if (v.shape()[1] != 1) fail("bcast_channel", "expected single channel, got " + v.value().shape_str());
    const int n = v.shape()[0], h = v.shape()[2], w = v.shape()[3];
    Tensor y({n, c, h, w});
    K::bcast_channel(n, c, h * w, v.value().ptr(), y.ptr());
    return make("bcast_channel", {v}, std::move(y), [](const Var& gy, unsigned) {
        return std::vector<Var>{sum_channel(gy)};
    });
}

Var sum_per_sample(const Var& a) {
    if (a.value().rank() < 1) fail("sum_per_sample", "need at least rank 1");
    const int n = a.shape()[0];
    const long chw = a.numel() / n;
    Tensor y({n});
    K::sum_per_sample(n, chw, a.value().ptr(), y.ptr());
    std::vector<int> orig = a.shape();
    return make("sum_per_sample", {a}, std::move(y),
                [orig = std::move(orig)](const Var& gy, unsigned) {
                    return std::vector<Var>{bcast_per_sample(gy, orig)};
                });
}

Var bcast_per_sample(const Var& v, std::vector<int> shape) {
    check_rank("bcast_per_sample", v, 1);
    if (shape.empty() || shape[0] != v.shape()[0])
        fail("bcast_per_sample", "target batch does not match " + v.value().shape_str());
    const int n = shape[0];
    const long chw = Tensor::count(shape) / n;
    Tensor y(shape);
    K::bcast_per_sample(n, chw, v.value().ptr(), y.ptr());
    return make("bcast_per_sample", {v}, std::move(y), [](const Var& gy, unsigned) {
        return std::vector<Var>{sum_per_sample(gy)};
    });
}

Var sum_axis0(const Var& a) {
    check_rank("sum_axis0", a, 2);
    const int n = a.shape()[0], m = a.shape()[1];
    Tensor y({m});
    K::sum_axis0(n, m, a.value().ptr(), y.ptr());
    return make("sum_axis0", {a}, std::move(y), [n](const Var& gy, unsigned) {
        return std::vector<Var>{bcast_row(gy, n)};
    });
}

Var sum_axis1(const Var& a) {
    check_rank("sum_axis1", a, 2);
    const int n = a.shape()[0], m = a.shape()[1];
    Tensor y({n});
    K::sum_axis1(n, m, a.value().ptr(), y.ptr());
    return make("sum_axis1", {a}, std::move(y), [m](const Var& gy, unsigned) {
        return std::vector<Var>{bcast_col(gy, m)};
    });
}

Var bcast_row(const Var& r, int n) {
    check_rank("bcast_row", r, 1);
    const int m = r.shape()[0];
    Tensor y({n, m});
    K::bcast_row(n, m, r.value().ptr(), y.ptr());
    return make("bcast_row", {r}, std::move(y), [](const Var& gy, unsigned) {
        return std::vector<Var>{sum_axis0(gy)};
    });
}

Var bcast_col(const Var& c, int m) {
    check_rank("bcast_col", c, 1);
    const int n = c.shape()[0];
    Tensor y({n, m});
    K::bcast_col(n, m, c.value().ptr(), y.ptr());
    return make("bcast_col", {c}, std::move(y), [](const Var& gy, unsigned) {
        return std::vector<Var>{sum_axis1(gy)};
    });
}

// ---------------------------------------------------------------------------
// composites
// ---------------------------------------------------------------------------

Var mean_all(const Var& a) {
    return mul_scalar(sum_all(a), 1.f / static_cast<float>(a.numel()));
}

Var mean_spatial(const Var& a) {
    check_rank("mean_spatial", a, 4);
    const float inv = 1.f / static_cast<float>(a.shape()[2] * a.shape()[3]);
    return mul_scalar(sum_spatial(a), inv);
}

Var linear(const Var& x, const Var& w, const Var& b) {
    check_rank("linear", x, 2);
    check_rank("linear", w, 2);
    check_rank("linear", b, 1);
    if (w.shape()[1] != x.shape()[1] || b.shape()[0] != w.shape()[0])
        fail("linear", "x " + x.value().shape_str() + " w " + w.value().shape_str());
    return add(matmul(x, transpose2(w)), bcast_row(b, x.shape()[0]));
}

Var instance_norm(const Var& x, float eps) {
    check_rank("instance_norm", x, 4);
    const int h = x.shape()[2], w = x.shape()[3];
    Var xc = sub(x, bcast_spatial(mean_spatial(x), h, w));
    Var var = mean_spatial(mul(xc, xc));
    return mul(xc, bcast_spatial(rsqrt(var, eps), h, w));
}

// ---------------------------------------------------------------------------
// reverse pass
// ---------------------------------------------------------------------------

std::vector<Var> grad_vars(const Var& root, const std::vector<Var>& wrt) {
    if (!root.defined()) throw std::runtime_error("grad: undefined root");
    if (root.numel() != 1)
        throw std::runtime_error("grad: root must be scalar, got " + root.value().shape_str());

    std::unordered_set<VarData*> wrtset;
    for (const auto& v : wrt) {
        if (!v.defined()) throw std::runtime_error("grad: undefined target");
        wrtset.insert(v.data().get());
    }

    // Postorder over the tape: every input precedes its consumers.
    std::vector<VarData*> order;
    std::unordered_map<VarData*, int> state;
    std::vector<VarData*> stack{root.data().get()};
    while (!stack.empty()) {
        VarData* v = stack.back();
        int st = state[v];
        if (st == 0) {
            state[v] = 1;
            if (v->producer)
                for (const auto& in : v->producer->inputs)
                    if (state[in.get()] == 0) stack.push_back(in.get());
        } else {
            stack.pop_back();
            if (st == 1) {
                state[v] = 2;
                order.push_back(v);
            }
        }
    }

    // A node matters only if a requested target is reachable below it.
    std::unordered_set<VarData*> useful;
    for (VarData* v : order) {
        if (wrtset.count(v)) {
            useful.insert(v);
            continue;
        }
        if (!v->producer) continue;
        for (const auto& in : v->producer->inputs)
            if (useful.count(in.get())) {
                useful.insert(v);
                break;
            }
    }

    std::unordered_map<VarData*, Var> gmap;
    gmap.emplace(root.data().get(), Var::constant(Tensor(root.shape(), 1.f)));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        VarData* v = *it;
        if (!v->producer || !useful.count(v)) continue;
        auto git = gmap.find(v);
        if (git == gmap.end()) continue;
        const Var gy = git->second;
        const auto& ins = v->producer->inputs;
        if (ins.size() > 32) throw std::runtime_error("grad: too many node inputs");
        unsigned wants = 0;
        for (size_t i = 0; i < ins.size(); ++i)
            if (useful.count(ins[i].get())) wants |= 1u << i;
        if (!wants) continue;
        std::vector<Var> gins = v->producer->backward(gy, wants);
        if (gins.size() != ins.size())
            throw std::runtime_error(std::string("grad: bad backward arity in ") + v->producer->op);
        for (size_t i = 0; i < ins.size(); ++i) {
            if (!(wants >> i & 1u) || !gins[i].defined()) continue;
            if (!gins[i].value().same_shape(ins[i]->value))
                throw std::runtime_error(std::string("grad: shape drift in backward of ") +
                                         v->producer->op);
            auto slot = gmap.find(ins[i].get());
            if (slot == gmap.end())
                gmap.emplace(ins[i].get(), gins[i]);
            else
                slot->second = add(slot->second, gins[i]);
        }
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (const auto& v : wrt) {
        auto it = gmap.find(v.data().get());
        if (it != gmap.end() && useful.count(v.data().get()))
            out.push_back(it->second);
        else
            out.push_back(Var::constant(Tensor(v.shape(), 0.f)));
    }
    return out;
}

std::vector<Tensor> grad(const Var& root, const std::vector<Var>& wrt) {
    std::vector<Var> gv = grad_vars(root, wrt);
    std::vector<Tensor> out;
    out.reserve(gv.size());
    for (const auto& g : gv) out.push_back(g.value());
    return out;
}

} // namespace d3t::ad
