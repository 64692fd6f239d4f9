#include "d3t/augment.hpp"

#include <stdexcept>

#include "d3t/rng.hpp"
#include "d3t/tensor.hpp"

namespace d3t::augment {

using namespace d3t::ad;

void AugmentPolicy::validate() const {
    for (const auto& op : ops)
        if (op != "color" && op != "translation" && op != "cutout")
            throw std::invalid_argument("augment: unknown op '" + op + "'");
}

AugmentPolicy parse_policy(const std::string& s) {
    AugmentPolicy p;
    std::string cur;
    for (char c : s + ",") {
        if (c == ',') {
            if (!cur.empty() && cur != "none") p.ops.push_back(cur);
            cur.clear();
        } else if (c != ' ') {
            cur += c;
        }
    }
    p.validate();
    return p;
}

std::string policy_string(const AugmentPolicy& p) {
    std::string s;
    for (const auto& op : p.ops) s += (s.empty() ? "" : ",") + op;
    return s.empty() ? "none" : s;
}

namespace {

Rng slot_rng(uint64_t step_seed, const char* op, int slot) {
    const uint64_t op_key = fnv1a64(op, std::char_traits<char>::length(op));
    return Rng(Rng::mix(Rng::mix(step_seed, op_key), static_cast<uint64_t>(slot)));
}

Var apply_color(const Var& x, uint64_t seed) {
    const auto& sh = x.shape();
    const int n = sh[0], c = sh[1];
    const long chw = x.numel() / n;
    Tensor bright({n}), satur({n}), contr({n});
    for (int i = 0; i < n; ++i) {
        Rng rng = slot_rng(seed, "color", i);
        bright[i] = rng.uniform(-0.5f, 0.5f);
        satur[i] = rng.uniform(0.f, 2.f);
        contr[i] = rng.uniform(0.5f, 1.5f);
    }
    std::vector<int> full = sh;
    Var y = add(x, bcast_per_sample(Var::constant(bright), full));

    Var mc = bcast_channel(mul_scalar(sum_channel(y), 1.f / static_cast<float>(c)), c);
    Var sb = bcast_per_sample(Var::constant(satur), full);
    y = add(mc, mul(sub(y, mc), sb));

    Var m = bcast_per_sample(mul_scalar(sum_per_sample(y), 1.f / static_cast<float>(chw)), full);
    Var cb = bcast_per_sample(Var::constant(contr), full);
    y = add(m, mul(sub(y, m), cb));

    return clamp(y, -1.f, 1.f);
}

Var apply_translation(const Var& x, uint64_t seed) {
    const auto& sh = x.shape();
    const int n = sh[0], res = sh[2];
    const int limit = res / 8;
    std::vector<int> dy(static_cast<size_t>(n)), dx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng = slot_rng(seed, "translation", i);
        dy[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(2 * limit + 1)) - limit;
        dx[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(2 * limit + 1)) - limit;
    }
    return translate_np(x, std::move(dy), std::move(dx));
}

Var apply_cutout(const Var& x, uint64_t seed) {
    const auto& sh = x.shape();
    const int n = sh[0], c = sh[1], h = sh[2], w = sh[3];
    const int side = h / 2;
    Tensor mask(sh, 1.f);
    for (int i = 0; i < n; ++i) {
        Rng rng = slot_rng(seed, "cutout", i);
        const int top = static_cast<int>(rng.uniform_int(h - side + 1));
        const int left = static_cast<int>(rng.uniform_int(w - side + 1));
        for (int ch = 0; ch < c; ++ch)
            for (int yy = top; yy < top + side; ++yy)
                for (int xx = left; xx < left + side; ++xx)
                    mask[((long(i) * c + ch) * h + yy) * w + xx] = 0.f;
    }
    return mul(x, Var::constant(std::move(mask)));
}

} // namespace

Var diff_augment(const Var& x, const AugmentPolicy& policy, uint64_t step_seed) {
    policy.validate();
    if (x.shape().size() != 4)
        throw std::invalid_argument("diff_augment: expected [n,c,h,w], got " +
                                    x.value().shape_str());
    Var y = x;
    for (const auto& op : policy.ops) {
        if (op == "color")
            y = apply_color(y, step_seed);
        else if (op == "translation")
            y = apply_translation(y, step_seed);
        else
            y = apply_cutout(y, step_seed);
    }
    return y;
}

} // namespace d3t::augment
