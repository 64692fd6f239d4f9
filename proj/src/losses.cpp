#include "d3t/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace d3t::losses {

using namespace d3t::ad;

void MMDConfig::validate() const {
    if (metric != "mmd" && metric != "l2")
        throw std::invalid_argument("mmd.metric must be 'mmd' or 'l2'");
    if (kernel != "rbf-multiscale" && kernel != "linear")
        throw std::invalid_argument("mmd.kernel must be 'rbf-multiscale' or 'linear'");
    if (fixed_sigma < 0.f) throw std::invalid_argument("mmd.fixed_sigma must be >= 0");
    if (fixed_sigma == 0.f && kernel == "rbf-multiscale") {
        if (bandwidth_scales.empty())
            throw std::invalid_argument("mmd.bandwidth_scales must be nonempty");
        for (float s : bandwidth_scales)
            if (s <= 0.f) throw std::invalid_argument("mmd.bandwidth_scales must be positive");
    }
}

LayerMask default_mask(int layer_count_g, int layer_count_d) {
    auto lower = [](int L) {
        std::vector<int> idx;
        const int top = (4 * L + 6) / 7; // ceil(4L/7)
        for (int i = 1; i <= std::max(1, top); ++i) idx.push_back(i);
        return idx;
    };
    return {lower(layer_count_g), lower(layer_count_d)};
}

Var pool(const Var& fmap) { return mean_spatial(fmap); }

float median_pairwise_distance(const Tensor& A, const Tensor& B) {
    if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[1])
        throw std::invalid_argument("median_pairwise_distance: need [n,d]/[m,d]");
    const int d = A.shape[1];
    const int n = A.shape[0], m = B.shape[0];
    std::vector<const float*> rows;
    rows.reserve(static_cast<size_t>(n + m));
    for (int i = 0; i < n; ++i) rows.push_back(A.ptr() + long(i) * d);
    for (int i = 0; i < m; ++i) rows.push_back(B.ptr() + long(i) * d);
    std::vector<float> dist;
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = i + 1; j < rows.size(); ++j) {
            double s = 0;
            for (int k = 0; k < d; ++k) {
                const double diff = double(rows[i][k]) - rows[j][k];
                s += diff * diff;
            }
            dist.push_back(static_cast<float>(std::sqrt(s)));
        }
    if (dist.empty()) return 1.f;
    const size_t mid = (dist.size() - 1) / 2;
    std::nth_element(dist.begin(), dist.begin() + mid, dist.end());
    const float med = dist[mid];
    return med > 0.f ? med : 1.f;
}

namespace {

void check_rows(const char* op, const Var& A, const Var& B) {
    if (A.shape().size() != 2 || B.shape().size() != 2 || A.shape()[1] != B.shape()[1])
        throw std::invalid_argument(std::string(op) + ": need [n,d] and [m,d], got " +
                                    A.value().shape_str() + " / " + B.value().shape_str());
}

/// ||x_i - y_j||^2 as rsqX_i + rsqY_j - 2 x_i.y_j; one code path for the
/// AA / BB / AB grams so identical inputs give bitwise-identical outputs.
Var sqdist(const Var& X, const Var& Y, const Var& rsqX, const Var& rsqY) {
    const int n = X.shape()[0], m = Y.shape()[0];
    Var cross = matmul(X, transpose2(Y));
    return add(sub(bcast_col(rsqX, m), mul_scalar(cross, 2.f)), bcast_row(rsqY, n));
}

Var gram_mean_linear(const Var& X, const Var& Y) { return mean_all(matmul(X, transpose2(Y))); }

Var mmd_squared(const Var& A, const Var& B, const MMDConfig& cfg) {
    if (cfg.kernel == "linear") {
        Var kaa = gram_mean_linear(A, A);
        Var kbb = gram_mean_linear(B, B);
        Var kab = gram_mean_linear(A, B);
        return sub(add(kaa, kbb), mul_scalar(kab, 2.f));
    }
    std::vector<float> sigmas;
    if (cfg.fixed_sigma > 0.f) {
        sigmas.push_back(cfg.fixed_sigma);
    } else {
        const float med = median_pairwise_distance(A.value(), B.value());
        for (float s : cfg.bandwidth_scales) sigmas.push_back(s * med);
    }
    Var rsqA = sum_axis1(mul(A, A));
    Var rsqB = sum_axis1(mul(B, B));
    Var daa = sqdist(A, A, rsqA, rsqA);
    Var dbb = sqdist(B, B, rsqB, rsqB);
    Var dab = sqdist(A, B, rsqA, rsqB);
    Var total;
    for (float sigma : sigmas) {
        const float c = -1.f / (2.f * sigma * sigma);
        Var kaa = mean_all(exp_(mul_scalar(daa, c)));
        Var kbb = mean_all(exp_(mul_scalar(dbb, c)));
        Var kab = mean_all(exp_(mul_scalar(dab, c)));
        Var est = sub(add(kaa, kbb), mul_scalar(kab, 2.f));
        total = total.defined() ? add(total, est) : est;
    }
    return total;
}

Var maybe_sqrt(const Var& v, const MMDConfig& cfg) {
    if (!cfg.take_sqrt) return v;
    // zero (or negative slack) stays exactly zero; the root has no usable
    // gradient there anyway
    if (v.scalar() <= 1e-12f) return mul_scalar(v, 0.f);
    return sqrtp(v, 0.f);
}

Var masked_mean_distance(const char* op, const std::vector<Var>& src,
                         const std::vector<Var>& tgt, const std::vector<int>& layers,
                         const MMDConfig& cfg, bool cut_source) {
    if (src.size() != tgt.size())
        throw std::invalid_argument(std::string(op) + ": pyramid depth mismatch");
    if (layers.empty()) throw std::invalid_argument(std::string(op) + ": empty layer mask");
    Var acc;
    for (int idx : layers) {
        if (idx < 1 || idx > static_cast<int>(src.size()))
            throw std::invalid_argument(std::string(op) + ": layer index " + std::to_string(idx) +
                                        " out of range 1.." + std::to_string(src.size()));
        Var a = pool(src[static_cast<size_t>(idx - 1)]);
        Var b = pool(tgt[static_cast<size_t>(idx - 1)]);
        if (a.shape()[1] != b.shape()[1])
            throw std::invalid_argument(std::string(op) + ": channel mismatch at layer " +
                                        std::to_string(idx));
        if (cut_source && a.requires_grad()) a = detach(a);
        Var d = feature_distance(a, b, cfg);
        acc = acc.defined() ? add(acc, d) : d;
    }
    return mul_scalar(acc, 1.f / static_cast<float>(layers.size()));
}

} // namespace

Var mmd(const Var& A, const Var& B, const MMDConfig& cfg) {
    cfg.validate();
    check_rows("mmd", A, B);
    return mmd_squared(A, B, cfg);
}

Var l2_feature_distance(const Var& A, const Var& B) {
    if (!A.value().same_shape(B.value()))
        throw std::invalid_argument("l2_feature_distance: shape mismatch " +
                                    A.value().shape_str() + " vs " + B.value().shape_str());
    Var d = sub(A, B);
    return mean_all(mul(d, d));
}

Var feature_distance(const Var& A, const Var& B, const MMDConfig& cfg) {
    cfg.validate();
    Var v = cfg.metric == "l2" ? l2_feature_distance(A, B) : mmd(A, B, cfg);
    return maybe_sqrt(v, cfg);
}

Var generator_distillation(const std::vector<Var>& f_src, const std::vector<Var>& f_tgt,
                           const LayerMask& mask, const MMDConfig& cfg) {
    return masked_mean_distance("generator_distillation", f_src, f_tgt, mask.generator_layers,
                                cfg, /*cut_source=*/true);
}

Var discriminator_distillation(const std::vector<Var>& es_real, const std::vector<Var>& et_real,
                               const std::vector<Var>& es_fake, const std::vector<Var>& et_fake,
                               const LayerMask& mask, const MMDConfig& cfg) {
    Var real_term = masked_mean_distance("discriminator_distillation", es_real, et_real,
                                         mask.discriminator_layers, cfg, /*cut_source=*/true);
    Var fake_term = masked_mean_distance("discriminator_distillation", es_fake, et_fake,
                                         mask.discriminator_layers, cfg, /*cut_source=*/true);
    return add(real_term, fake_term);
}

Var generator_regularization(const std::vector<Var>& es_real, const std::vector<Var>& es_fake,
                             const LayerMask& mask, const MMDConfig& cfg) {
    // both sides run through the frozen critic; the real side carries no
    // gradient path, the fake side reaches the generator through its images
    return masked_mean_distance("generator_regularization", es_real, es_fake,
                                mask.discriminator_layers, cfg, /*cut_source=*/false);
}

Var adversarial_g(const Var& fake_scores) {
    if (fake_scores.numel() < 1) throw std::invalid_argument("adversarial_g: empty scores");
    return mul_scalar(sum_all(fake_scores), -1.f / static_cast<float>(fake_scores.numel()));
}

Var adversarial_d(const Var& fake_scores, const Var& real_scores) {
    if (fake_scores.numel() < 1 || real_scores.numel() < 1)
        throw std::invalid_argument("adversarial_d: empty scores");
    Var mf = mul_scalar(sum_all(fake_scores), 1.f / static_cast<float>(fake_scores.numel()));
    Var mr = mul_scalar(sum_all(real_scores), 1.f / static_cast<float>(real_scores.numel()));
    return sub(mf, mr);
}

Var r1_penalty(const backbone::ParamSet& d_params, const backbone::NetworkConfig& cfg,
               const Tensor& real_images) {
    Var x = Var::leaf(real_images);
    Var scores = backbone::discriminate(d_params, cfg, x).scores;
    Var gx = grad_vars(sum_all(scores), {x})[0];
    const int n = real_images.shape.at(0);
    return mul_scalar(sum_all(mul(gx, gx)), 1.f / static_cast<float>(n));
}

double r1_penalty_value(const backbone::GanSnapshot& d_snapshot, const Tensor& real_images) {
    backbone::ParamSet p = backbone::ParamSet::constants(d_snapshot);
    return r1_penalty(p, d_snapshot.config, real_images).scalar();
}

double total_g(double adv, double dis, double reg, const LossWeights& w) {
    return adv + double(w.lambda2) * dis + double(w.lambda3) * reg;
}

double total_d(double adv, double dis, double r1, const LossWeights& w, double gamma) {
    return adv + double(w.lambda4) * dis + gamma * r1;
}

} // namespace d3t::losses
