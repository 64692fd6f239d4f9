#include "d3t/inversion.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "d3t/autodiff.hpp"
#include "d3t/rng.hpp"

namespace d3t::inversion {

namespace fs = std::filesystem;
using backbone::GanSnapshot;

void InversionSchedule::validate() const {
    if (iterations <= 0) throw std::invalid_argument("inversion.iterations must be positive");
    if (!(lr_init > 0.f)) throw std::invalid_argument("inversion.lr_init must be positive");
    if (decay_every <= 0) throw std::invalid_argument("inversion.decay_every must be positive");
    if (!(lr_decay_factor > 0.f && lr_decay_factor <= 1.f))
        throw std::invalid_argument("inversion.lr_decay_factor must be in (0, 1]");
    if (!(lambda1 >= 0.f)) throw std::invalid_argument("inversion.lambda1 must be non-negative");
    if (init != "mapped-noise" && init != "mean-style")
        throw std::invalid_argument("inversion.init must be 'mapped-noise' or 'mean-style'");
}

uint64_t InversionSchedule::hash() const {
    uint64_t h = fnv1a64(&iterations, sizeof(iterations));
    h = fnv1a64(&lr_init, sizeof(lr_init), h);
    h = fnv1a64(&decay_every, sizeof(decay_every), h);
    h = fnv1a64(&lr_decay_factor, sizeof(lr_decay_factor), h);
    h = fnv1a64(&lambda1, sizeof(lambda1), h);
    return fnv1a64(init.data(), init.size(), h);
}

namespace {

/// Synthesis noise is pinned to stream 0 so the objective is a fixed function
/// of the code and the cached feature pyramids stay reproducible.
constexpr uint64_t kNoiseSeed = 0;

Tensor as_batch1(const Tensor& image) {
    if (image.rank() == 3) {
        Tensor t = image;
        t.shape = {1, image.dim(0), image.dim(1), image.dim(2)};
        return t;
    }
    if (image.rank() == 4 && image.dim(0) == 1) return image;
    throw std::invalid_argument("invert: target must be [3,r,r] or [1,3,r,r], got " +
                                image.shape_str());
}

struct Objective {
    ad::Var total, pixel, perceptual; // perceptual undefined when lambda1 == 0
};

Objective build_objective(const std::vector<ad::Var>& styles, const ad::Var& target,
                          const std::vector<Tensor>& target_feats, const GanSnapshot& source,
                          const extractor::Extractor& ex, float lambda1) {
    auto p = backbone::ParamSet::constants(source);
    auto gen = backbone::generate(p, source.config, styles, kNoiseSeed);
    Objective o;
    ad::Var diff = ad::sub(gen.image, target);
    o.pixel = ad::sum_all(ad::mul(diff, diff));
    o.total = o.pixel;
    if (lambda1 > 0.f) {
        auto taps = ex.features(gen.image);
        for (size_t i = 0; i < taps.size(); ++i) {
            ad::Var d = ad::sub(taps[i], ad::Var::constant(target_feats[i]));
            ad::Var s = ad::sum_all(ad::mul(d, d));
            o.perceptual = o.perceptual.defined() ? ad::add(o.perceptual, s) : s;
        }
        o.total = ad::add(o.pixel, ad::mul_scalar(o.perceptual, lambda1));
    }
    return o;
}

Tensor initial_style(const GanSnapshot& source, const std::string& init, uint64_t seed) {
    const int sd = source.config.style_dim;
    if (init == "mapped-noise") {
        Tensor z = randn({1, sd}, Rng(Rng::mix(seed, fnv1a64("invert-z", 8))));
        return backbone::map_noise_t(source, z);
    }
    // mean-style: average of 10^4 mapped unit normals, image-independent.
    Rng rng(fnv1a64("mean-style", 10));
    std::vector<double> acc(static_cast<size_t>(sd), 0.0);
    const int batches = 100, per = 100;
    for (int b = 0; b < batches; ++b) {
        Tensor z = randn({per, sd}, rng.fork(static_cast<uint64_t>(b)));
        Tensor w = backbone::map_noise_t(source, z);
        for (int i = 0; i < per; ++i)
            for (int j = 0; j < sd; ++j) acc[static_cast<size_t>(j)] += w[i * sd + j];
    }
    Tensor mean({1, sd});
    for (int j = 0; j < sd; ++j)
        mean[j] = static_cast<float>(acc[static_cast<size_t>(j)] / (batches * per));
    return mean;
}

std::vector<Tensor> code_styles(const Code& code) {
    return code;
}

double eval_objective(const Code& code, const ad::Var& target,
                      const std::vector<Tensor>& target_feats, const GanSnapshot& source,
                      const extractor::Extractor& ex, float lambda1) {
    std::vector<ad::Var> styles;
    styles.reserve(code.size());
    for (const auto& c : code) styles.push_back(ad::Var::constant(c));
    return build_objective(styles, target, target_feats, source, ex, lambda1).total.scalar();
}

} // namespace

double inversion_objective(const Code& code, const Tensor& target, const GanSnapshot& source,
                           const extractor::Extractor& ex, float lambda1) {
    source.config.validate();
    if (static_cast<int>(code.size()) != source.config.layer_count())
        throw std::invalid_argument("inversion_objective: code must hold one style per block");
    Tensor t4 = as_batch1(target);
    std::vector<Tensor> tfeat;
    if (lambda1 > 0.f) tfeat = ex.features_t(t4);
    return eval_objective(code, ad::Var::constant(t4), tfeat, source, ex, lambda1);
}

InversionResult invert(const Tensor& target, const GanSnapshot& source,
                       const extractor::Extractor& ex, const InversionSchedule& sched,
                       uint64_t seed) {
    sched.validate();
    source.config.validate();
    backbone::check_layout(source);
    const int L = source.config.layer_count(), sd = source.config.style_dim;
    const int r = source.config.resolution;
    Tensor t4 = as_batch1(target);
    if (t4.dim(1) != 3 || t4.dim(2) != r || t4.dim(3) != r)
        throw std::invalid_argument("invert: target shape " + target.shape_str() +
                                    " does not match generator resolution " + std::to_string(r));
    ad::Var target_c = ad::Var::constant(t4);
    std::vector<Tensor> tfeat;
    if (sched.lambda1 > 0.f) tfeat = ex.features_t(t4);

    Code code(static_cast<size_t>(L), initial_style(source, sched.init, seed));

    // Adam on the code, one slot per block.
    const float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
    std::vector<Tensor> m(static_cast<size_t>(L), Tensor({1, sd})),
        v(static_cast<size_t>(L), Tensor({1, sd}));

    InversionResult res;
    res.loss_trace.reserve(static_cast<size_t>(sched.iterations));
    Code best_code = code;
    double best = std::numeric_limits<double>::infinity();

    for (int it = 0; it < sched.iterations; ++it) {
        std::vector<ad::Var> styles;
        styles.reserve(static_cast<size_t>(L));
        for (const auto& c : code) styles.push_back(ad::Var::leaf(c));
        Objective obj = build_objective(styles, target_c, tfeat, source, ex, sched.lambda1);
        const double f = obj.total.scalar();
        if (!std::isfinite(f)) throw std::runtime_error("invert: non-finite objective");
        res.loss_trace.push_back(f);
        if (f < best) {
            best = f;
            best_code = code;
        }
        std::vector<Tensor> g = ad::grad(obj.total, styles);

        const float lr =
            sched.lr_init * std::pow(sched.lr_decay_factor, static_cast<float>(it / sched.decay_every));
        const float t = static_cast<float>(it + 1);
        const float c1 = 1.f - std::pow(b1, t), c2 = 1.f - std::pow(b2, t);
        for (int l = 0; l < L; ++l) {
            auto& ml = m[static_cast<size_t>(l)];
            auto& vl = v[static_cast<size_t>(l)];
            auto& cl = code[static_cast<size_t>(l)];
            const Tensor& gl = g[static_cast<size_t>(l)];
            for (long i = 0; i < cl.numel(); ++i) {
                ml[i] = b1 * ml[i] + (1.f - b1) * gl[i];
                vl[i] = b2 * vl[i] + (1.f - b2) * gl[i] * gl[i];
                cl[i] -= lr * (ml[i] / c1) / (std::sqrt(vl[i] / c2) + eps);
            }
        }
    }

    // Keep the best code seen, counting the post-update state.
    const double f_end = eval_objective(code, target_c, tfeat, source, ex, sched.lambda1);
    if (f_end <= best) best_code = std::move(code);

    backbone::SynthResult sr = backbone::synthesize(source, code_styles(best_code), kNoiseSeed);
    res.code = std::move(best_code);
    Tensor rec = sr.image;
    rec.shape = {3, r, r};
    res.reconstruction = std::move(rec);

    double pix = 0;
    for (long i = 0; i < t4.numel(); ++i) {
        const double d = static_cast<double>(res.reconstruction[i]) - t4[i];
        pix += d * d;
    }
    res.final_pixel_loss = pix;
    double perc = 0;
    {
        Tensor rec4 = res.reconstruction;
        rec4.shape = {1, 3, r, r};
        auto fr = ex.features_t(rec4);
        auto ft = tfeat.empty() ? ex.features_t(t4) : tfeat;
        for (size_t i = 0; i < fr.size(); ++i)
            for (long j = 0; j < fr[i].numel(); ++j) {
                const double d = static_cast<double>(fr[i][j]) - ft[i][j];
                perc += d * d;
            }
    }
    res.final_perceptual_loss = perc;
    return res;
}

// -- transform cache ---------------------------------------------------------

namespace {

void put_le32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_le64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_le32(const unsigned char* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
}

uint64_t get_le64(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

constexpr uint32_t kRecordMagic = 0x64337454u; // "d3tT"

std::string encode_record(uint64_t item_hash, const InversionResult& r, int sd, int res) {
    std::string b;
    put_le32(b, kRecordMagic);
    put_le64(b, item_hash);
    put_le32(b, static_cast<uint32_t>(r.code.size()));
    put_le32(b, static_cast<uint32_t>(sd));
    put_le32(b, static_cast<uint32_t>(res));
    put_le64(b, std::bit_cast<uint64_t>(r.final_pixel_loss));
    put_le64(b, std::bit_cast<uint64_t>(r.final_perceptual_loss));
    for (const auto& c : r.code)
        for (float f : c.data) put_le32(b, std::bit_cast<uint32_t>(f));
    for (float f : r.reconstruction.data) put_le32(b, std::bit_cast<uint32_t>(f));
    put_le64(b, fnv1a64(b.data(), b.size()));
    return b;
}

bool decode_record(const std::string& b, uint64_t item_hash, int L, int sd, int res,
                   InversionResult& out) {
    const size_t expect = 4 + 8 + 4 + 4 + 4 + 8 + 8 +
                          static_cast<size_t>(L) * sd * 4 + static_cast<size_t>(3) * res * res * 4 + 8;
    if (b.size() != expect) return false;
    if (fnv1a64(b.data(), b.size() - 8) !=
        get_le64(reinterpret_cast<const unsigned char*>(b.data() + b.size() - 8)))
        return false;
    const auto* p = reinterpret_cast<const unsigned char*>(b.data());
    if (get_le32(p) != kRecordMagic) return false;
    if (get_le64(p + 4) != item_hash) return false;
    if (get_le32(p + 12) != static_cast<uint32_t>(L) || get_le32(p + 16) != static_cast<uint32_t>(sd) ||
        get_le32(p + 20) != static_cast<uint32_t>(res))
        return false;
    out.final_pixel_loss = std::bit_cast<double>(get_le64(p + 24));
    out.final_perceptual_loss = std::bit_cast<double>(get_le64(p + 32));
    size_t off = 40;
    out.code.assign(static_cast<size_t>(L), Tensor({1, sd}));
    for (auto& c : out.code)
        for (long i = 0; i < c.numel(); ++i, off += 4)
            c[i] = std::bit_cast<float>(get_le32(p + off));
    out.reconstruction = Tensor({3, res, res});
    for (long i = 0; i < out.reconstruction.numel(); ++i, off += 4)
        out.reconstruction[i] = std::bit_cast<float>(get_le32(p + off));
    out.loss_trace.clear();
    return true;
}

} // namespace

std::string resolve_cache_root(const std::string& configured) {
    if (const char* env = std::getenv("D3T_CACHE_DIR"); env && *env) return env;
    if (!configured.empty()) return configured;
    return "d3t-cache";
}

std::string transform_cache_dir(const std::string& cache_root, const GanSnapshot& source,
                                const InversionSchedule& sched) {
    return (fs::path(cache_root) / "transforms" /
            (hex64(backbone::snapshot_hash(source)) + "-" + hex64(sched.hash())))
        .string();
}

std::vector<TransformedSample> precompute_transforms(const data::Dataset& targets,
                                                     const GanSnapshot& source,
                                                     const extractor::Extractor& ex,
                                                     const InversionSchedule& sched,
                                                     const std::string& cache_root) {
    sched.validate();
    if (targets.count() == 0) throw std::invalid_argument("precompute_transforms: empty dataset");
    if (targets.resolution != source.config.resolution)
        throw std::invalid_argument("precompute_transforms: dataset resolution " +
                                    std::to_string(targets.resolution) +
                                    " does not match generator resolution " +
                                    std::to_string(source.config.resolution));
    const int L = source.config.layer_count(), sd = source.config.style_dim;
    const int r = source.config.resolution;

    const fs::path dir = transform_cache_dir(cache_root, source, sched);
    const fs::path transforms = dir.parent_path();
    if (fs::is_directory(transforms) && !fs::is_directory(dir)) {
        bool others = false;
        for (const auto& e : fs::directory_iterator(transforms))
            others = others || e.is_directory();
        if (others)
            std::fprintf(stderr,
                         "warning: transform cache at %s was built for a different source "
                         "snapshot or schedule; recomputing all inversions\n",
                         transforms.string().c_str());
    }
    fs::create_directories(dir);

    std::vector<TransformedSample> out;
    out.reserve(static_cast<size_t>(targets.count()));
    for (long i = 0; i < targets.count(); ++i) {
        const uint64_t ih = targets.item_hashes[static_cast<size_t>(i)];
        const fs::path rec_path = dir / (hex64(ih) + ".bin");

        TransformedSample s;
        s.item_hash = ih;
        s.target_image = targets.item(i);

        bool hit = false;
        if (fs::is_regular_file(rec_path)) {
            std::ifstream in(rec_path, std::ios::binary);
            std::string bytes((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
            hit = decode_record(bytes, ih, L, sd, r, s.inversion);
            if (!hit)
                std::fprintf(stderr, "warning: transform record %s is stale or corrupt; redoing\n",
                             rec_path.string().c_str());
        }
        if (!hit) {
            const uint64_t seed = Rng::mix(fnv1a64("invert", 6), ih);
            s.inversion = invert(s.target_image, source, ex, sched, seed);
            const std::string bytes = encode_record(ih, s.inversion, sd, r);
            std::ofstream o(rec_path, std::ios::binary | std::ios::trunc);
            o.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
            o.flush();
            if (!o) throw std::runtime_error("precompute_transforms: cannot write " +
                                             rec_path.string());
        }

        backbone::SynthResult sr = backbone::synthesize(source, s.inversion.code, kNoiseSeed);
        s.source_features = std::move(sr.taps);
        out.push_back(std::move(s));
    }

    std::ofstream index(dir / "index.txt", std::ios::trunc);
    for (long i = 0; i < targets.count(); ++i)
        index << hex64(targets.item_hashes[static_cast<size_t>(i)]) << " "
              << targets.names[static_cast<size_t>(i)] << "\n";
    if (!index) throw std::runtime_error("precompute_transforms: cannot write index");
    return out;
}

} // namespace d3t::inversion
