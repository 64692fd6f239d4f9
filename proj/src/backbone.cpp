#include "d3t/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "d3t/rng.hpp"

namespace d3t::backbone {

using namespace d3t::ad;

int NetworkConfig::layer_count() const {
    int n = 0; // blocks live at 4, 8, ..., resolution
    for (int r = resolution; r >= 4; r /= 2) ++n;
    return n;
}

int NetworkConfig::channels_at(int r) const {
    const long c = static_cast<long>(channel_base) * resolution / r;
    return static_cast<int>(std::min<long>(256, c));
}

void NetworkConfig::validate() const {
    if (resolution < 8 || (resolution & (resolution - 1)) != 0)
        throw std::invalid_argument("network.resolution must be a power of two >= 8");
    if (style_dim <= 0) throw std::invalid_argument("network.style_dim must be positive");
    if (mapping_depth < 1) throw std::invalid_argument("network.mapping_depth must be >= 1");
    if (channel_base < 1) throw std::invalid_argument("network.channel_base must be >= 1");
}

namespace {

std::string block(const char* net, int i, const char* leaf) {
    return std::string(net) + "." + std::to_string(i) + "." + leaf;
}

} // namespace

std::map<std::string, std::vector<int>> param_layout(const NetworkConfig& cfg) {
    cfg.validate();
    std::map<std::string, std::vector<int>> m;
    const int L = cfg.layer_count();
    const int sd = cfg.style_dim;

    for (int i = 0; i < cfg.mapping_depth; ++i) {
        m["g.mapping." + std::to_string(i) + ".weight"] = {sd, sd};
        m["g.mapping." + std::to_string(i) + ".bias"] = {sd};
    }
    m["g.const"] = {cfg.channels_at(4), 4, 4};
    int cin = cfg.channels_at(4);
    for (int i = 0, r = 4; i < L; ++i, r *= 2) {
        const int cout = cfg.channels_at(r);
        m[block("g.synth", i, "conv.weight")] = {cout, cin, 3, 3};
        m[block("g.synth", i, "noise_scale")] = {cout};
        m[block("g.synth", i, "style_s.weight")] = {cout, sd};
        m[block("g.synth", i, "style_s.bias")] = {cout};
        m[block("g.synth", i, "style_b.weight")] = {cout, sd};
        m[block("g.synth", i, "style_b.bias")] = {cout};
        cin = cout;
    }
    m["g.to_rgb.weight"] = {3, cin, 1, 1};
    m["g.to_rgb.bias"] = {3};

    m["d.from_rgb.weight"] = {cfg.channels_at(cfg.resolution), 3, 1, 1};
    m["d.from_rgb.bias"] = {cfg.channels_at(cfg.resolution)};
    cin = cfg.channels_at(cfg.resolution);
    for (int j = 0, r = cfg.resolution; j < L; ++j, r /= 2) {
        const int cout = cfg.channels_at(r / 2);
        m[block("d.block", j, "conv.weight")] = {cout, cin, 3, 3};
        m[block("d.block", j, "conv.bias")] = {cout};
        cin = cout;
    }
    m["d.critic.weight"] = {1, cin * 16};
    m["d.critic.bias"] = {1};
    return m;
}

GanSnapshot init_snapshot(const NetworkConfig& cfg, uint64_t seed, Role role) {
    GanSnapshot s;
    s.config = cfg;
    s.role = role;
    s.step = 0;
    for (const auto& [name, shape] : param_layout(cfg)) {
        Rng rng(Rng::mix(seed, fnv1a64(name.data(), name.size())));
        Tensor t(shape);
        const bool is_weight = name.ends_with("weight") || name == "g.const";
        if (is_weight) {
            long fan_in = 1;
            for (size_t d = 1; d < shape.size(); ++d) fan_in *= shape[d];
            if (name == "g.const") fan_in = 1;
            const float std = 1.f / std::sqrt(static_cast<float>(fan_in));
            for (long i = 0; i < t.numel(); ++i) t[i] = std * rng.normal();
        } else if (name.ends_with("style_s.bias")) {
            for (long i = 0; i < t.numel(); ++i) t[i] = 1.f; // identity modulation
        }
        // remaining biases and noise_scale start at zero
        s.params[name] = std::move(t);
    }
    return s;
}

GanSnapshot init_target_from_source(const GanSnapshot& source) {
    if (source.role != Role::Source)
        throw std::invalid_argument("init_target_from_source: snapshot role is not source");
    check_layout(source);
    GanSnapshot t = source;
    t.role = Role::Target;
    t.step = 0;
    return t;
}

uint64_t params_hash(const std::map<std::string, Tensor>& params) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, t] : params) {
        h = fnv1a64(name.data(), name.size(), h);
        h = tensor_hash(t, h);
    }
    return h;
}

uint64_t snapshot_hash(const GanSnapshot& s) { return params_hash(s.params); }

void check_layout(const GanSnapshot& s) {
    auto want = param_layout(s.config);
    if (s.params.size() != want.size())
        throw std::runtime_error("snapshot: wrong parameter count");
    for (const auto& [name, shape] : want) {
        auto it = s.params.find(name);
        if (it == s.params.end()) throw std::runtime_error("snapshot: missing parameter " + name);
        if (it->second.shape != shape)
            throw std::runtime_error("snapshot: bad shape for " + name + ": " +
                                     it->second.shape_str());
    }
}

ParamSet ParamSet::leaves(const GanSnapshot& s) {
    ParamSet p;
    for (const auto& [name, t] : s.params) p.v.emplace(name, Var::leaf(t));
    return p;
}

ParamSet ParamSet::constants(const GanSnapshot& s) {
    ParamSet p;
    for (const auto& [name, t] : s.params) p.v.emplace(name, Var::constant(t));
    return p;
}

const Var& ParamSet::at(const std::string& name) const {
    auto it = v.find(name);
    if (it == v.end()) throw std::runtime_error("ParamSet: no parameter " + name);
    return it->second;
}

namespace {

/// x / sqrt(mean(x^2) + eps), per row.
Var pixel_norm(const Var& z) {
    const int d = z.shape()[1];
    Var ms = mul_scalar(sum_axis1(mul(z, z)), 1.f / static_cast<float>(d));
    return mul(z, bcast_col(rsqrt(ms, 1e-8f), d));
}

Var conv_bias(const Var& x, const Var& b) {
    const int n = x.shape()[0], h = x.shape()[2], w = x.shape()[3];
    return add(x, bcast_spatial(bcast_row(b, n), h, w));
}

} // namespace

Var map_noise(const ParamSet& p, const NetworkConfig& cfg, const Var& z) {
    if (z.shape().size() != 2 || z.shape()[1] != cfg.style_dim)
        throw std::invalid_argument("map_noise: expected [n, style_dim], got " +
                                    z.value().shape_str());
    if (!z.value().all_finite()) throw std::invalid_argument("map_noise: non-finite noise");
    Var h = pixel_norm(z);
    for (int i = 0; i < cfg.mapping_depth; ++i) {
        const std::string base = "g.mapping." + std::to_string(i);
        h = linear(h, p.at(base + ".weight"), p.at(base + ".bias"));
        if (i + 1 < cfg.mapping_depth) h = lrelu(h, 0.2f);
    }
    return h;
}

GenOut generate(const ParamSet& p, const NetworkConfig& cfg, const std::vector<Var>& styles,
                uint64_t noise_seed) {
    const int L = cfg.layer_count();
    if (static_cast<int>(styles.size()) != L)
        throw std::invalid_argument("generate: need one style per block, got " +
                                    std::to_string(styles.size()) + " of " + std::to_string(L));
    const int n = styles[0].shape()[0];
    for (const auto& s : styles)
        if (s.shape().size() != 2 || s.shape()[0] != n || s.shape()[1] != cfg.style_dim)
            throw std::invalid_argument("generate: style shape " + s.value().shape_str());

    GenOut out;
    Var x = repeat_batch(p.at("g.const"), n);
    for (int i = 0, r = 4; i < L; ++i, r *= 2) {
        const std::string base = "g.synth." + std::to_string(i);
        if (i > 0) x = upsample2(x);
        x = conv2d(x, p.at(base + ".conv.weight"), 1);
        const int c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
        if (cfg.noise_injection) {
            Tensor nz({1, h, w});
            Rng rng(Rng::mix(noise_seed, static_cast<uint64_t>(i) + 1));
            for (long k = 0; k < nz.numel(); ++k) nz[k] = rng.normal();
            Var noise = bcast_channel(repeat_batch(Var::constant(std::move(nz)), n), c);
            Var scale = bcast_spatial(bcast_row(p.at(base + ".noise_scale"), n), h, w);
            x = add(x, mul(noise, scale));
        }
        Var xn = instance_norm(x);
        Var ss = linear(styles[i], p.at(base + ".style_s.weight"), p.at(base + ".style_s.bias"));
        Var sb = linear(styles[i], p.at(base + ".style_b.weight"), p.at(base + ".style_b.bias"));
        x = add(mul(xn, bcast_spatial(ss, h, w)), bcast_spatial(sb, h, w));
        x = lrelu(x, 0.2f);
        out.taps.push_back(x);
    }
    Var rgb = conv_bias(conv2d(x, p.at("g.to_rgb.weight"), 0), p.at("g.to_rgb.bias"));
    out.image = tanh_(rgb);
    return out;
}

DiscOut discriminate(const ParamSet& p, const NetworkConfig& cfg, const Var& images) {
    const auto& sh = images.shape();
    if (sh.size() != 4 || sh[1] != 3 || sh[2] != cfg.resolution || sh[3] != cfg.resolution)
        throw std::invalid_argument("discriminate: expected [n,3," +
                                    std::to_string(cfg.resolution) + "," +
                                    std::to_string(cfg.resolution) + "], got " +
                                    images.value().shape_str());
    const int L = cfg.layer_count();
    const int n = sh[0];

    DiscOut out;
    Var x = lrelu(conv_bias(conv2d(images, p.at("d.from_rgb.weight"), 0), p.at("d.from_rgb.bias")),
                  0.2f);
    for (int j = 0; j < L; ++j) {
        const std::string base = "d.block." + std::to_string(j);
        x = lrelu(conv_bias(conv2d(x, p.at(base + ".conv.weight"), 1), p.at(base + ".conv.bias")),
                  0.2f);
        out.taps.push_back(x);
        if (j + 1 < L) x = avgpool2(x);
    }
    const int flat = x.shape()[1] * x.shape()[2] * x.shape()[3];
    Var score = linear(reshape(x, {n, flat}), p.at("d.critic.weight"), p.at("d.critic.bias"));
    out.scores = reshape(score, {n});
    return out;
}

SynthResult synthesize(const GanSnapshot& s, const std::vector<Tensor>& styles,
                       uint64_t noise_seed) {
    check_layout(s);
    ParamSet p = ParamSet::constants(s);
    std::vector<Var> sv;
    sv.reserve(styles.size());
    for (const auto& t : styles) sv.push_back(Var::constant(t));
    GenOut g = generate(p, s.config, sv, noise_seed);
    SynthResult r;
    r.image = g.image.value();
    for (const auto& t : g.taps) r.taps.push_back(t.value());
    return r;
}

Tensor map_noise_t(const GanSnapshot& s, const Tensor& z) {
    ParamSet p = ParamSet::constants(s);
    return map_noise(p, s.config, Var::constant(z)).value();
}

SynthResult sample_images(const GanSnapshot& s, int n, uint64_t z_seed, uint64_t noise_seed) {
    if (n < 1) throw std::invalid_argument("sample_images: need n >= 1");
    Tensor z({n, s.config.style_dim});
    for (int i = 0; i < n; ++i) {
        Rng rng(Rng::mix(z_seed, static_cast<uint64_t>(i)));
        for (int j = 0; j < s.config.style_dim; ++j) z[long(i) * s.config.style_dim + j] = rng.normal();
    }
    Tensor w = map_noise_t(s, z);
    std::vector<Tensor> styles(static_cast<size_t>(s.config.layer_count()), w);
    return synthesize(s, styles, noise_seed);
}

} // namespace d3t::backbone
