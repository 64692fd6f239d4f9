#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "d3t/tensor.hpp"

namespace d3t::ad {

struct VarData;

/// Handle to a node in a define-by-run computation graph.  Copying a Var is
/// cheap; the underlying value and tape record are shared.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<VarData> d) : d_(std::move(d)) {}

    /// Differentiable input (parameter or optimization target).
    static Var leaf(Tensor t);
    /// Non-differentiable input; gradients stop here.
    static Var constant(Tensor t);

    bool defined() const { return d_ != nullptr; }
    const Tensor& value() const;
    const std::vector<int>& shape() const;
    long numel() const;
    /// Value of a single-element tensor; throws otherwise.
    float scalar() const;
    bool requires_grad() const;
    const std::shared_ptr<VarData>& data() const { return d_; }

private:
    std::shared_ptr<VarData> d_;
};

struct Node {
    const char* op = "";
    std::vector<std::shared_ptr<VarData>> inputs;
    /// Produces one gradient per input, skipping entries whose bit in `wants`
    /// is clear.  Emits traced ops, so gradients are themselves differentiable.
    std::function<std::vector<Var>(const Var& gy, unsigned wants)> backward;
};

struct VarData {
    Tensor value;
    std::shared_ptr<Node> producer;
    bool requires_grad = false;
};

// -- elementwise ------------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var mul_scalar(const Var& a, float s);
Var add_scalar(const Var& a, float s);
Var exp_(const Var& a);
Var tanh_(const Var& a);
Var rsqrt(const Var& a, float eps);
Var sqrtp(const Var& a, float eps);
Var recip(const Var& a);
Var lrelu(const Var& a, float slope);
Var clamp(const Var& a, float lo, float hi);

// -- linear algebra ---------------------------------------------------------
Var matmul(const Var& a, const Var& b);   // [m,k] x [k,n] -> [m,n]
Var transpose2(const Var& a);             // [m,n] -> [n,m]

// -- convolution; the fwd/dx/dw triple is closed under differentiation ------
Var conv2d(const Var& x, const Var& w, int pad);
Var conv2d_dx_op(const Var& gy, const Var& w, int pad, int h, int wdt);
Var conv2d_dw_op(const Var& x, const Var& gy, int k, int pad);

// -- resampling -------------------------------------------------------------
Var avgpool2(const Var& x);
Var upsample2(const Var& x);
/// Per-sample integer shift with zero fill; shifts are not differentiated.
Var translate_np(const Var& x, std::vector<int> dy, std::vector<int> dx);

// -- shape ------------------------------------------------------------------
Var reshape(const Var& a, std::vector<int> shape);
Var repeat_batch(const Var& a, int n);    // [...] -> [n, ...]
Var detach(const Var& a);

// -- reductions and their broadcast adjoints --------------------------------
Var sum_all(const Var& a);                               // -> [1]
Var sum_spatial(const Var& a);                           // [n,c,h,w] -> [n,c]
Var bcast_spatial(const Var& v, int h, int w);           // [n,c] -> [n,c,h,w]
Var sum_channel(const Var& a);                           // [n,c,h,w] -> [n,1,h,w]
Var bcast_channel(const Var& v, int c);                  // [n,1,h,w] -> [n,c,h,w]
Var sum_per_sample(const Var& a);                        // [n,...] -> [n]
Var bcast_per_sample(const Var& v, std::vector<int> shape);
Var sum_axis0(const Var& a);                             // [n,m] -> [m]
Var sum_axis1(const Var& a);                             // [n,m] -> [n]
Var bcast_row(const Var& r, int n);                      // [m] -> [n,m]
Var bcast_col(const Var& c, int m);                      // [n] -> [n,m]

// -- composites -------------------------------------------------------------
Var mean_all(const Var& a);
Var mean_spatial(const Var& a);                          // [n,c,h,w] -> [n,c]
Var linear(const Var& x, const Var& w, const Var& b);    // x[n,i] w[o,i] b[o]
Var instance_norm(const Var& x, float eps = 1e-8f);

/// Gradients of a scalar root with respect to `wrt`, as graph nodes that can
/// be differentiated again.  Unreachable targets yield zero constants.
std::vector<Var> grad_vars(const Var& root, const std::vector<Var>& wrt);
/// Same, but returns plain tensors and releases the tape.
std::vector<Tensor> grad(const Var& root, const std::vector<Var>& wrt);

} // namespace d3t::ad
