#include "d3t/extractor.hpp"

#include <cmath>
#include <stdexcept>

#include "d3t/kernels.hpp"
#include "d3t/rng.hpp"

namespace d3t::extractor {

using namespace d3t::ad;

namespace {
constexpr int kWidths[] = {16, 48, 64, 128};
constexpr int kStages = 4;
} // namespace

Extractor Extractor::frozen_random(uint64_t seed) {
    Extractor e;
    e.id = "frozen-rand-v1-" + std::to_string(seed);
    int cin = 3;
    for (int s = 0; s < kStages; ++s) {
        const int cout = kWidths[s];
        const std::string name = "stage." + std::to_string(s) + ".weight";
        Rng rng(Rng::mix(seed, fnv1a64(name.data(), name.size())));
        Tensor w({cout, cin, 3, 3});
        const float std = std::sqrt(2.f / static_cast<float>(cin * 9));
        for (long i = 0; i < w.numel(); ++i) w[i] = std * rng.normal();
        e.params[name] = std::move(w);
        cin = cout;
    }
    return e;
}

int Extractor::descriptor_dim() const {
    int d = 0;
    for (int s = 0; s < kStages; ++s) d += kWidths[s];
    return d;
}

std::vector<Var> Extractor::features(const Var& images) const {
    const auto& sh = images.shape();
    if (sh.size() != 4 || sh[1] != 3)
        throw std::invalid_argument("extractor: expected [n,3,h,w], got " +
                                    images.value().shape_str());
    std::vector<Var> taps;
    Var x = images;
    for (int s = 0; s < kStages; ++s) {
        auto it = params.find("stage." + std::to_string(s) + ".weight");
        if (it == params.end()) throw std::runtime_error("extractor: missing stage weights");
        if (s > 0) x = avgpool2(x);
        x = lrelu(conv2d(x, Var::constant(it->second), 1), 0.2f);
        taps.push_back(x);
    }
    return taps;
}

std::vector<Tensor> Extractor::features_t(const Tensor& images) const {
    std::vector<Tensor> out;
    for (const auto& v : features(Var::constant(images))) out.push_back(v.value());
    return out;
}

Tensor Extractor::descriptors(const Tensor& images) const {
    const int n = images.shape.at(0);
    std::vector<Tensor> taps = features_t(images);
    Tensor d({n, descriptor_dim()});
    int col = 0;
    for (const auto& t : taps) {
        const int c = t.shape[1], hw = t.shape[2] * t.shape[3];
        Tensor pooled({n, c});
        kernels::sum_spatial(n, c, hw, t.ptr(), pooled.ptr());
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j)
                d[long(i) * d.shape[1] + col + j] = pooled[long(i) * c + j] / static_cast<float>(hw);
        col += c;
    }
    return d;
}

} // namespace d3t::extractor
