#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "d3t/backbone.hpp"
#include "d3t/losses.hpp"
#include "d3t/rng.hpp"
#include "d3t/tensor.hpp"

using namespace d3t;
using namespace d3t::losses;
using d3t::ad::Var;

namespace {

Tensor randn_t(std::vector<int> shape, Rng& rng, float scale = 1.f) {
    Tensor t(std::move(shape));
    for (long i = 0; i < t.numel(); ++i) t[i] = scale * float(rng.normal());
    return t;
}

Tensor filled(std::vector<int> shape, float v) {
    Tensor t(std::move(shape));
    for (long i = 0; i < t.numel(); ++i) t[i] = v;
    return t;
}

MMDConfig l2_cfg() {
    MMDConfig c;
    c.metric = "l2";
    return c;
}

} // namespace

TEST_CASE("config validation") {
    MMDConfig c;
    CHECK_NOTHROW(c.validate());
    c.metric = "cosine";
    CHECK_THROWS(c.validate());
    c = MMDConfig{};
    c.kernel = "poly";
    CHECK_THROWS(c.validate());
    c = MMDConfig{};
    c.fixed_sigma = -1.f;
    CHECK_THROWS(c.validate());
    c = MMDConfig{};
    c.bandwidth_scales = {1.f, -2.f};
    CHECK_THROWS(c.validate());
    c.fixed_sigma = 3.f; // scales unused once sigma is pinned
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("default mask keeps the lower four sevenths") {
    LayerMask m = default_mask(7, 7);
    CHECK(m.generator_layers == std::vector<int>{1, 2, 3, 4});
    CHECK(m.discriminator_layers == std::vector<int>{1, 2, 3, 4});
    CHECK(default_mask(5, 5).generator_layers == std::vector<int>{1, 2, 3});
    CHECK(default_mask(3, 3).generator_layers == std::vector<int>{1, 2});
    CHECK(default_mask(1, 1).generator_layers == std::vector<int>{1});
}

TEST_CASE("spatial pooling averages each channel map") {
    Tensor x({1, 2, 2, 2});
    for (long i = 0; i < 8; ++i) x[i] = float(i + 1);
    Tensor p = pool(Var::constant(x)).value();
    CHECK(p.shape == std::vector<int>{1, 2});
    CHECK(p[0] == doctest::Approx(2.5f));
    CHECK(p[1] == doctest::Approx(6.5f));
}

TEST_CASE("median pairwise distance") {
    // Rows 0, 3, 0 give distances {3, 0, 3}; the middle one is 3.
    Tensor a = Tensor::from({2, 1}, {0.f, 3.f});
    Tensor b = Tensor::from({1, 1}, {0.f});
    CHECK(median_pairwise_distance(a, b) == doctest::Approx(3.f));
    // All coincident rows fall back to 1 so bandwidths stay positive.
    Tensor z({3, 2});
    CHECK(median_pairwise_distance(z, z) == 1.f);
    CHECK_THROWS(median_pairwise_distance(Tensor({2, 2}), Tensor({2, 3})));
}

TEST_CASE("identical sample sets have exactly zero mmd") {
    Rng rng(4);
    Tensor a0 = randn_t({5, 3}, rng);
    MMDConfig cfg;
    SUBCASE("rbf") {}
    SUBCASE("linear") { cfg.kernel = "linear"; }
    SUBCASE("rbf with sqrt") { cfg.take_sqrt = true; }
    Var v = feature_distance(Var::constant(a0), Var::constant(a0), cfg);
    CHECK(v.scalar() == 0.f); // bitwise, not approximately
}

TEST_CASE("linear kernel reduces to squared mean difference") {
    MMDConfig cfg;
    cfg.kernel = "linear";
    // means differ by (1, 2) -> estimate 5
    Tensor a = Tensor::from({2, 2}, {0.f, 0.f, 2.f, 0.f});
    Tensor b = Tensor::from({2, 2}, {2.f, 2.f, 2.f, 2.f});
    CHECK(mmd(Var::constant(a), Var::constant(b), cfg).scalar() == doctest::Approx(5.f));
    // equal means, different spread -> 0 under the linear kernel
    Tensor c = Tensor::from({2, 2}, {1.f, 1.f, 1.f, -1.f});
    Tensor d = Tensor::from({2, 2}, {1.f, 0.f, 1.f, 0.f});
    CHECK(mmd(Var::constant(c), Var::constant(d), cfg).scalar() ==
          doctest::Approx(0.f).epsilon(1e-6));
}

TEST_CASE("rbf estimate matches the closed form at a pinned bandwidth") {
    MMDConfig cfg;
    cfg.fixed_sigma = 1.f;
    Tensor a = Tensor::from({1, 1}, {0.f});
    Tensor b = Tensor::from({1, 1}, {2.f});
    const double want = 2.0 - 2.0 * std::exp(-2.0);
    CHECK(mmd(Var::constant(a), Var::constant(b), cfg).scalar() ==
          doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("rbf estimate sums over scaled median bandwidths") {
    MMDConfig cfg; // median of {0, 2} distances is 2
    Tensor a = Tensor::from({1, 1}, {0.f});
    Tensor b = Tensor::from({1, 1}, {2.f});
    double want = 0;
    for (double s : {0.5, 1.0, 2.0, 4.0, 8.0}) {
        const double sigma = s * 2.0;
        want += 2.0 - 2.0 * std::exp(-4.0 / (2.0 * sigma * sigma));
    }
    CHECK(mmd(Var::constant(a), Var::constant(b), cfg).scalar() ==
          doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("mmd is symmetric and nonnegative on random sets") {
    Rng rng(11);
    Tensor a = randn_t({6, 4}, rng);
    Tensor b = randn_t({4, 4}, rng, 1.5f);
    MMDConfig cfg;
    const float ab = mmd(Var::constant(a), Var::constant(b), cfg).scalar();
    const float ba = mmd(Var::constant(b), Var::constant(a), cfg).scalar();
    CHECK(ab == doctest::Approx(ba).epsilon(1e-5));
    CHECK(ab > 0.f);
    CHECK_THROWS(mmd(Var::constant(a), Var::constant(Tensor({4, 5})), cfg));
}

TEST_CASE("mmd gradients match finite differences") {
    Rng rng(7);
    Tensor a0 = randn_t({4, 3}, rng);
    Tensor b0 = randn_t({3, 3}, rng, 1.3f);
    MMDConfig cfg;
    SUBCASE("rbf pinned sigma") { cfg.fixed_sigma = 1.7f; }
    SUBCASE("linear") { cfg.kernel = "linear"; }
    SUBCASE("l2 paired") {
        cfg.metric = "l2";
        b0 = randn_t({4, 3}, rng);
    }

    Var a = Var::leaf(a0), b = Var::leaf(b0);
    Var v = feature_distance(a, b, cfg);
    std::vector<Tensor> g = ad::grad(v, {a, b});

    auto value_at = [&](const Tensor& at, const Tensor& bt) {
        return feature_distance(Var::constant(at), Var::constant(bt), cfg).scalar();
    };
    Rng dir(3);
    Tensor da = randn_t(a0.shape, dir), db = randn_t(b0.shape, dir);
    double dot = 0;
    for (long i = 0; i < g[0].numel(); ++i) dot += double(g[0][i]) * da[i];
    for (long i = 0; i < g[1].numel(); ++i) dot += double(g[1][i]) * db[i];

    const float h = 1e-2f;
    Tensor ap = a0, am = a0, bp = b0, bm = b0;
    for (long i = 0; i < a0.numel(); ++i) {
        ap[i] += h * da[i];
        am[i] -= h * da[i];
    }
    for (long i = 0; i < b0.numel(); ++i) {
        bp[i] += h * db[i];
        bm[i] -= h * db[i];
    }
    const double fd = (value_at(ap, bp) - value_at(am, bm)) / (2.0 * h);
    CHECK(dot == doctest::Approx(fd).epsilon(2e-2));
}

TEST_CASE("paired squared distance on a hand example") {
    Tensor a = Tensor::from({1, 1}, {0.f});
    Tensor b = Tensor::from({1, 1}, {2.f});
    CHECK(l2_feature_distance(Var::constant(a), Var::constant(b)).scalar() == 4.f);
    CHECK_THROWS(l2_feature_distance(Var::constant(a), Var::constant(Tensor({2, 1}))));
}

TEST_CASE("square root is applied on demand and is exact at zero") {
    MMDConfig cfg = l2_cfg();
    cfg.take_sqrt = true;
    Tensor a = Tensor::from({1, 1}, {0.f});
    Tensor b = Tensor::from({1, 1}, {3.f});
    CHECK(feature_distance(Var::constant(a), Var::constant(b), cfg).scalar() ==
          doctest::Approx(3.f));
    CHECK(feature_distance(Var::constant(a), Var::constant(a), cfg).scalar() == 0.f);
}

TEST_CASE("generator distillation averages masked layers and cuts the source") {
    std::vector<Var> src = {Var::leaf(filled({2, 3, 2, 2}, 1.f)),
                            Var::leaf(filled({2, 3, 4, 4}, 0.f))};
    std::vector<Var> tgt = {Var::leaf(filled({2, 3, 2, 2}, 2.f)),
                            Var::leaf(filled({2, 3, 4, 4}, 3.f))};
    LayerMask mask{{1, 2}, {}};
    Var v = generator_distillation(src, tgt, mask, l2_cfg());
    CHECK(v.scalar() == doctest::Approx(5.f)); // (1 + 9) / 2

    LayerMask only2{{2}, {}};
    CHECK(generator_distillation(src, tgt, only2, l2_cfg()).scalar() == doctest::Approx(9.f));

    std::vector<Tensor> g = ad::grad(v, {src[0], tgt[0]});
    CHECK(g[0].max_abs() == 0.f); // frozen teacher side
    CHECK(g[1].max_abs() > 0.f);

    LayerMask bad{{0}, {}};
    CHECK_THROWS(generator_distillation(src, tgt, bad, l2_cfg()));
    bad.generator_layers = {3};
    CHECK_THROWS(generator_distillation(src, tgt, bad, l2_cfg()));
    bad.generator_layers = {};
    CHECK_THROWS(generator_distillation(src, tgt, bad, l2_cfg()));

    std::vector<Var> wide = {Var::leaf(filled({2, 4, 2, 2}, 1.f)), tgt[1]};
    LayerMask one{{1}, {}};
    CHECK_THROWS(generator_distillation(wide, tgt, one, l2_cfg()));
}

TEST_CASE("discriminator distillation adds real-pair and fake-pair terms") {
    std::vector<Var> es_r = {Var::constant(filled({2, 3, 2, 2}, 1.f))};
    std::vector<Var> et_r = {Var::leaf(filled({2, 3, 2, 2}, 2.f))};
    std::vector<Var> es_f = {Var::constant(filled({2, 3, 2, 2}, 0.f))};
    std::vector<Var> et_f = {Var::leaf(filled({2, 3, 2, 2}, 3.f))};
    LayerMask mask{{}, {1}};
    Var v = discriminator_distillation(es_r, et_r, es_f, et_f, mask, l2_cfg());
    CHECK(v.scalar() == doctest::Approx(10.f)); // 1 + 9

    std::vector<Tensor> g = ad::grad(v, {et_r[0], et_f[0]});
    CHECK(g[0].max_abs() > 0.f);
    CHECK(g[1].max_abs() > 0.f);
}

TEST_CASE("generator regularization keeps both sides in the graph") {
    std::vector<Var> es_r = {Var::leaf(filled({2, 3, 2, 2}, 1.f))};
    std::vector<Var> es_f = {Var::leaf(filled({2, 3, 2, 2}, 3.f))};
    LayerMask mask{{}, {1}};
    Var v = generator_regularization(es_r, es_f, mask, l2_cfg());
    CHECK(v.scalar() == doctest::Approx(4.f));
    std::vector<Tensor> g = ad::grad(v, {es_r[0], es_f[0]});
    CHECK(g[0].max_abs() > 0.f);
    CHECK(g[1].max_abs() > 0.f);
}

TEST_CASE("wasserstein adversarial terms") {
    Var fake = Var::constant(Tensor::from({2}, {1.f, 3.f}));
    Var real = Var::constant(Tensor::from({2}, {2.f, 6.f}));
    CHECK(adversarial_g(fake).scalar() == doctest::Approx(-2.f));
    CHECK(adversarial_d(fake, real).scalar() == doctest::Approx(-2.f));
}

TEST_CASE("gradient penalty equals the mean squared input-gradient norm") {
    backbone::NetworkConfig cfg;
    cfg.resolution = 8;
    cfg.style_dim = 8;
    cfg.mapping_depth = 1;
    cfg.channel_base = 4;
    backbone::GanSnapshot snap = backbone::init_snapshot(cfg, 5, backbone::Role::Source);
    Rng rng(9);
    Tensor x = randn_t({2, 3, 8, 8}, rng, 0.5f);

    // Reference value: per-sample squared norm of d(score)/d(pixels).
    backbone::ParamSet pc = backbone::ParamSet::constants(snap);
    Var xv = ad::Var::leaf(x);
    Var scores = backbone::discriminate(pc, cfg, xv).scores;
    Tensor gx = ad::grad(ad::sum_all(scores), {xv})[0];
    double want = 0;
    for (long i = 0; i < gx.numel(); ++i) want += double(gx[i]) * gx[i];
    want /= 2.0;

    const double got = r1_penalty_value(snap, x);
    CHECK(got == doctest::Approx(want).epsilon(1e-4));
    CHECK(got > 0.0);

    // The penalty's own parameter gradient agrees with finite differences.
    // The penalty is only piecewise smooth in the weights (activation sign
    // patterns flip), so probes whose secant straddles a kink are skipped.
    backbone::ParamSet pl = backbone::ParamSet::leaves(snap);
    Var pen = r1_penalty(pl, cfg, x);
    const std::string name = "d.block.0.conv.weight";
    Tensor gp = ad::grad(pen, {pl.at(name)})[0];
    REQUIRE(gp.all_finite());
    const double f0 = pen.scalar();
    Rng pick(21);
    int checked = 0;
    for (int t = 0; t < 10 && checked < 3; ++t) {
        const long idx = long(pick.uniform_int(int(gp.numel())));
        const float h = 1e-3f;
        backbone::GanSnapshot up = snap, dn = snap;
        up.params[name][idx] += h;
        dn.params[name][idx] -= h;
        const double fp = r1_penalty_value(up, x), fm = r1_penalty_value(dn, x);
        const double fd = (fp - fm) / (2.0 * h);
        if (std::abs(fd) < 5e-4) continue;                      // too flat to resolve
        if (std::abs(fp + fm - 2 * f0) > 0.3 * std::abs(fp - fm)) continue; // kink inside
        CHECK(gp[idx] == doctest::Approx(fd).epsilon(0.1));
        ++checked;
    }
    CHECK(checked >= 1);
}

TEST_CASE("loss totals compose with the configured weights") {
    LossWeights w;
    CHECK(w.lambda2 == 5.f);
    CHECK(w.lambda3 == 1.f);
    CHECK(w.lambda4 == 1.f);
    CHECK(total_g(0.5, 0.25, 2.0, w) == doctest::Approx(0.5 + 5 * 0.25 + 2.0));
    CHECK(total_d(0.5, 0.25, 3.0, w, 10.0) == doctest::Approx(0.5 + 0.25 + 30.0));
}
