#include "d3t/trainer.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <set>
#include <stdexcept>

#include "d3t/rng.hpp"

namespace d3t::trainer {

using ad::Var;
using backbone::GanSnapshot;

void TransferConfig::validate() const {
    mmd.validate();
    augment.validate();
    if (batch_size <= 0) throw std::invalid_argument("transfer.batch_size must be positive");
    if (!(lr_g >= 0.f) || !(lr_d >= 0.f))
        throw std::invalid_argument("transfer learning rates must be non-negative");
    if (!(adam_beta1 >= 0.f && adam_beta1 < 1.f) || !(adam_beta2 >= 0.f && adam_beta2 < 1.f))
        throw std::invalid_argument("transfer Adam betas must lie in [0, 1)");
    if (total_steps < 0) throw std::invalid_argument("transfer.total_steps must be non-negative");
    if (!(r1_gamma >= 0.f)) throw std::invalid_argument("transfer.r1_gamma must be non-negative");
    if (r1_every <= 0) throw std::invalid_argument("transfer.r1_every must be positive");
    if (snapshot_every < 0)
        throw std::invalid_argument("transfer.snapshot_every must be non-negative");
    if (freeze_d_layers < 0)
        throw std::invalid_argument("transfer.freeze_d_layers must be non-negative");
    if (!(weights.lambda2 >= 0.f && weights.lambda3 >= 0.f && weights.lambda4 >= 0.f))
        throw std::invalid_argument("transfer loss weights must be non-negative");
}

namespace {

uint64_t tag(const char* s) {
    return fnv1a64(s, std::strlen(s));
}

/// Adam over a named parameter subset; moments are private to each instance.
struct Adam {
    float lr, b1, b2, eps = 1e-8f;
    long t = 0;
    std::map<std::string, Tensor> m, v;

    Adam(float lr_, float b1_, float b2_) : lr(lr_), b1(b1_), b2(b2_) {}

    void step(GanSnapshot& s, const std::vector<std::string>& names,
              const std::vector<Tensor>& grads, const std::set<std::string>& frozen) {
        ++t;
        const float c1 = 1.f - std::pow(b1, static_cast<float>(t));
        const float c2 = 1.f - std::pow(b2, static_cast<float>(t));
        for (size_t i = 0; i < names.size(); ++i) {
            if (frozen.count(names[i])) continue;
            Tensor& p = s.params.at(names[i]);
            auto [mi, inserted_m] = m.try_emplace(names[i], Tensor(p.shape));
            auto [vi, inserted_v] = v.try_emplace(names[i], Tensor(p.shape));
            Tensor& mm = mi->second;
            Tensor& vv = vi->second;
            const Tensor& g = grads[i];
            for (long j = 0; j < p.numel(); ++j) {
                mm[j] = b1 * mm[j] + (1.f - b1) * g[j];
                vv[j] = b2 * vv[j] + (1.f - b2) * g[j] * g[j];
                p[j] -= lr * (mm[j] / c1) / (std::sqrt(vv[j] / c2) + eps);
            }
        }
    }
};

Tensor real_batch(const data::Dataset& ds, int batch, Rng rng) {
    const long n = ds.count();
    std::vector<long> idx;
    idx.reserve(static_cast<size_t>(batch));
    if (n >= batch) {
        // Partial Fisher-Yates: a fresh batch without repeats.
        std::vector<long> pool(static_cast<size_t>(n));
        for (long i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
        for (int i = 0; i < batch; ++i) {
            const long j = i + rng.uniform_int(n - i);
            std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
            idx.push_back(pool[static_cast<size_t>(i)]);
        }
    } else {
        for (int i = 0; i < batch; ++i) idx.push_back(rng.uniform_int(n));
    }
    const int r = ds.resolution;
    const long plane = 3l * r * r;
    Tensor out({batch, 3, r, r});
    for (int i = 0; i < batch; ++i)
        std::copy_n(ds.images.ptr() + idx[static_cast<size_t>(i)] * plane, plane,
                    out.ptr() + static_cast<long>(i) * plane);
    return out;
}

/// Rows from the cached source-feature pyramids at one 0-based tap index.
Tensor gather_cached(const std::vector<inversion::TransformedSample>& cache,
                     const std::vector<long>& idx, int layer) {
    const Tensor& t0 = cache[static_cast<size_t>(idx[0])].source_features[static_cast<size_t>(layer)];
    const long plane = t0.numel();
    Tensor out({static_cast<int>(idx.size()), t0.dim(1), t0.dim(2), t0.dim(3)});
    for (size_t i = 0; i < idx.size(); ++i) {
        const Tensor& t = cache[static_cast<size_t>(idx[i])].source_features[static_cast<size_t>(layer)];
        if (!t.same_shape(t0))
            throw std::invalid_argument("transfer: cached feature pyramids disagree in shape");
        std::copy_n(t.ptr(), plane, out.ptr() + static_cast<long>(i) * plane);
    }
    return out;
}

std::vector<std::string> prefixed_names(const backbone::ParamSet& p, const char* prefix) {
    std::vector<std::string> names;
    for (const auto& [name, var] : p.v)
        if (name.rfind(prefix, 0) == 0) names.push_back(name);
    return names;
}

std::vector<Var> vars_for(const backbone::ParamSet& p, const std::vector<std::string>& names) {
    std::vector<Var> out;
    out.reserve(names.size());
    for (const auto& n : names) out.push_back(p.at(n));
    return out;
}

std::set<std::string> frozen_d_names(const backbone::NetworkConfig& net, int freeze_layers) {
    std::set<std::string> frozen;
    if (freeze_layers <= 0) return frozen;
    if (freeze_layers > net.layer_count())
        throw std::invalid_argument("transfer.freeze_d_layers exceeds the block count");
    for (const auto& [name, shape] : backbone::param_layout(net)) {
        if (name.rfind("d.from_rgb.", 0) == 0) frozen.insert(name);
        for (int j = 0; j < freeze_layers; ++j)
            if (name.rfind("d.block." + std::to_string(j) + ".", 0) == 0) frozen.insert(name);
    }
    return frozen;
}

struct LoopContext {
    const data::Dataset& reals;
    const GanSnapshot* source;                                 // null during pretraining
    const std::vector<inversion::TransformedSample>* cache;    // null during pretraining
    const TransferConfig& cfg;
    losses::LayerMask mask;
};

StepRecord train_one_step(GanSnapshot& work, LoopContext& ctx, long step, Adam& opt_g,
                          Adam& opt_d, const std::set<std::string>& frozen_d) {
    const TransferConfig& cfg = ctx.cfg;
    const backbone::NetworkConfig& net = work.config;
    const int B = cfg.batch_size;
    const uint64_t sseed = Rng::mix(cfg.seed, static_cast<uint64_t>(step));
    StepRecord rec;
    rec.step = step;

    const Tensor xr = real_batch(ctx.reals, B, Rng(Rng::mix(sseed, tag("batch"))));
    const bool distill_d = ctx.source && cfg.weights.lambda4 > 0.f;
    const bool distill_g = ctx.source && cfg.weights.lambda2 > 0.f;
    const bool regularize_g = ctx.source && cfg.weights.lambda3 > 0.f;

    { // discriminator step: adversarial + distillation + lazy gradient penalty
        backbone::SynthResult fake =
            backbone::sample_images(work, B, Rng::mix(sseed, tag("zd")), Rng::mix(sseed, tag("noise_d")));
        auto dp = backbone::ParamSet::leaves(work);
        const uint64_t aug_seed = Rng::mix(sseed, tag("aug-d"));
        Var axr = augment::diff_augment(Var::constant(xr), cfg.augment, aug_seed);
        Var axf = augment::diff_augment(Var::constant(fake.image), cfg.augment, aug_seed);
        auto dr = backbone::discriminate(dp, net, axr);
        auto df = backbone::discriminate(dp, net, axf);
        Var adv = losses::adversarial_d(df.scores, dr.scores);
        rec.loss_d_adv = adv.scalar();
        Var loss = adv;
        if (distill_d) {
            auto sp = backbone::ParamSet::constants(*ctx.source);
            auto sr = backbone::discriminate(sp, net, axr);
            auto sf = backbone::discriminate(sp, net, axf);
            Var dis = losses::discriminator_distillation(sr.taps, dr.taps, sf.taps, df.taps,
                                                         ctx.mask, cfg.mmd);
            rec.loss_d_dis = dis.scalar();
            loss = ad::add(loss, ad::mul_scalar(dis, cfg.weights.lambda4));
        }
        if (cfg.r1_gamma > 0.f && step % cfg.r1_every == 0) {
            Var r1 = losses::r1_penalty(dp, net, axr.value());
            rec.loss_r1 = r1.scalar();
            loss = ad::add(loss, ad::mul_scalar(r1, cfg.r1_gamma));
        }
        rec.loss_d_total = losses::total_d(rec.loss_d_adv, rec.loss_d_dis, rec.loss_r1,
                                           cfg.weights, cfg.r1_gamma);
        if (!std::isfinite(rec.loss_d_total))
            throw std::runtime_error("training: non-finite discriminator loss at step " +
                                     std::to_string(step));
        const auto names = prefixed_names(dp, "d.");
        opt_d.step(work, names, ad::grad(loss, vars_for(dp, names)), frozen_d);
    }

    { // generator step: adversarial + cached-feature distillation + regularization
        Tensor z = randn({B, net.style_dim}, Rng(Rng::mix(sseed, tag("zg"))));
        auto gp = backbone::ParamSet::leaves(work);
        Var w = backbone::map_noise(gp, net, Var::constant(z));
        std::vector<Var> styles(static_cast<size_t>(net.layer_count()), w);
        auto gen = backbone::generate(gp, net, styles, Rng::mix(sseed, tag("noise_g")));

        auto dc = backbone::ParamSet::constants(work);
        Var axf = augment::diff_augment(gen.image, cfg.augment, Rng::mix(sseed, tag("aug-g")));
        Var adv = losses::adversarial_g(backbone::discriminate(dc, net, axf).scores);
        rec.loss_g_adv = adv.scalar();
        Var loss = adv;
        if (distill_g) {
            Rng pick(Rng::mix(sseed, tag("cache")));
            std::vector<long> idx;
            idx.reserve(static_cast<size_t>(B));
            for (int i = 0; i < B; ++i)
                idx.push_back(pick.uniform_int(static_cast<long>(ctx.cache->size())));
            std::vector<Var> f_src;
            f_src.reserve(gen.taps.size());
            for (size_t l = 0; l < gen.taps.size(); ++l)
                f_src.push_back(Var::constant(gather_cached(*ctx.cache, idx, static_cast<int>(l))));
            Var dis = losses::generator_distillation(f_src, gen.taps, ctx.mask, cfg.mmd);
            rec.loss_g_dis = dis.scalar();
            loss = ad::add(loss, ad::mul_scalar(dis, cfg.weights.lambda2));
        }
        if (regularize_g) {
            auto sp = backbone::ParamSet::constants(*ctx.source);
            auto es_real = backbone::discriminate(sp, net, Var::constant(xr));
            auto es_fake = backbone::discriminate(sp, net, gen.image);
            Var reg = losses::generator_regularization(es_real.taps, es_fake.taps, ctx.mask,
                                                       cfg.mmd);
            rec.loss_g_reg = reg.scalar();
            loss = ad::add(loss, ad::mul_scalar(reg, cfg.weights.lambda3));
        }
        rec.loss_g_total =
            losses::total_g(rec.loss_g_adv, rec.loss_g_dis, rec.loss_g_reg, cfg.weights);
        if (!std::isfinite(rec.loss_g_total))
            throw std::runtime_error("training: non-finite generator loss at step " +
                                     std::to_string(step));
        const auto names = prefixed_names(gp, "g.");
        opt_g.step(work, names, ad::grad(loss, vars_for(gp, names)), {});
    }
    return rec;
}

TransferResult run_loop(const data::Dataset& reals, GanSnapshot work, const GanSnapshot* source,
                        const std::vector<inversion::TransformedSample>* cache,
                        const TransferConfig& cfg, const TrainCallbacks& cb) {
    cfg.validate();
    backbone::check_layout(work);
    if (reals.count() == 0) throw std::invalid_argument("training: empty dataset");
    if (reals.resolution != work.config.resolution)
        throw std::invalid_argument("training: dataset resolution " +
                                    std::to_string(reals.resolution) +
                                    " does not match network resolution " +
                                    std::to_string(work.config.resolution));

    LoopContext ctx{reals, source, cache, cfg, cfg.mask};
    const int L = work.config.layer_count();
    if (ctx.mask.generator_layers.empty() && ctx.mask.discriminator_layers.empty())
        ctx.mask = losses::default_mask(L, L);
    if (source && cfg.weights.lambda2 > 0.f) {
        if (!cache || cache->empty())
            throw std::invalid_argument("transfer: generator distillation needs cached transforms");
        for (const auto& s : *cache)
            if (static_cast<int>(s.source_features.size()) != L)
                throw std::invalid_argument("transfer: cached pyramid depth does not match network");
    }
    const std::set<std::string> frozen_d = frozen_d_names(work.config, cfg.freeze_d_layers);

    Adam opt_g(cfg.lr_g, cfg.adam_beta1, cfg.adam_beta2);
    Adam opt_d(cfg.lr_d, cfg.adam_beta1, cfg.adam_beta2);

    TransferResult res;
    res.best_score = std::numeric_limits<double>::infinity();
    res.best_step = -1;
    const long base_step = work.step;
    long last_emit = -1, last_eval = -1;

    for (long s = 0; s < cfg.total_steps; ++s) {
        StepRecord rec = train_one_step(work, ctx, s, opt_g, opt_d, frozen_d);
        work.step = base_step + s + 1;
        res.records.push_back(rec);
        if (cb.on_step) cb.on_step(rec);
        const long done = s + 1;
        if (cfg.snapshot_every > 0 && done % cfg.snapshot_every == 0) {
            if (cb.on_snapshot) cb.on_snapshot(work);
            last_emit = done;
        }
        if (cb.evaluate && cb.eval_every > 0 && done % cb.eval_every == 0) {
            const double sc = cb.evaluate(work, work.step);
            last_eval = done;
            if (sc < res.best_score) {
                res.best_score = sc;
                res.best_step = work.step;
                res.best_snapshot = work;
            }
        }
    }
    if (cb.on_snapshot && last_emit != cfg.total_steps) cb.on_snapshot(work);
    if (cb.evaluate && cb.eval_every > 0 && last_eval != cfg.total_steps) {
        const double sc = cb.evaluate(work, work.step);
        if (sc < res.best_score) {
            res.best_score = sc;
            res.best_step = work.step;
            res.best_snapshot = work;
        }
    }
    if (res.best_step < 0) { // evaluation disabled: the final state is the pick
        res.best_score = 0;
        res.best_step = work.step;
        res.best_snapshot = work;
    }
    res.final_snapshot = std::move(work);
    return res;
}

} // namespace

backbone::GanSnapshot pretrain(const data::Dataset& reals, const GanSnapshot& start,
                               const TransferConfig& cfg, const TrainCallbacks& cb) {
    backbone::check_layout(start);
    TransferResult r = run_loop(reals, start, nullptr, nullptr, cfg, cb);
    return std::move(r.final_snapshot);
}

TransferResult transfer(const data::Dataset& targets, const GanSnapshot& source,
                        const std::vector<inversion::TransformedSample>& cache,
                        const TransferConfig& cfg, const TrainCallbacks& cb) {
    GanSnapshot tgt = backbone::init_target_from_source(source);
    return run_loop(targets, std::move(tgt), &source, &cache, cfg, cb);
}

} // namespace d3t::trainer
