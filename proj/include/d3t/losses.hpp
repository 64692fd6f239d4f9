#pragma once

#include <vector>

#include "d3t/autodiff.hpp"
#include "d3t/backbone.hpp"
#include "d3t/tensor.hpp"

namespace d3t::losses {

using ad::Var;

/// Feature-set distance configuration.  `metric` selects squared kernel MMD
/// or plain mean-squared difference (the ablation switch); rbf bandwidths are
/// scales applied to the median pairwise distance of the joint sample unless
/// fixed_sigma overrides them with one absolute bandwidth.
struct MMDConfig {
    std::string metric = "mmd";             // "mmd" | "l2"
    std::string kernel = "rbf-multiscale";  // "rbf-multiscale" | "linear"
    std::vector<float> bandwidth_scales = {0.5f, 1.f, 2.f, 4.f, 8.f};
    float fixed_sigma = 0.f;                // > 0 bypasses the median heuristic
    bool take_sqrt = false;
    void validate() const;
};

/// 1-based block indices whose features participate in distillation.
struct LayerMask {
    std::vector<int> generator_layers;
    std::vector<int> discriminator_layers;
};

/// Lower portion of each pyramid: blocks 1..ceil(4L/7), the fraction used by
/// the reference layer ablation.
LayerMask default_mask(int layer_count_g, int layer_count_d);

struct LossWeights {
    float lambda2 = 5.f;
    float lambda3 = 1.f;
    float lambda4 = 1.f;
};

/// Spatial mean per channel: [n,c,h,w] -> [n,c].
Var pool(const Var& fmap);

/// Biased squared-MMD estimator between row sets A [n,d] and B [m,d]:
/// mean k(A,A) + mean k(B,B) - 2 mean k(A,B), summed over bandwidths.
/// Bitwise zero when A and B hold identical values.
Var mmd(const Var& A, const Var& B, const MMDConfig& cfg);

/// Mean squared elementwise difference; requires equal shapes (paired rows).
Var l2_feature_distance(const Var& A, const Var& B);

/// Dispatches on cfg.metric; applies the square root when configured.
Var feature_distance(const Var& A, const Var& B, const MMDConfig& cfg);

/// Masked-layer mean of pooled feature distances; the source side is cut out
/// of the gradient graph.
Var generator_distillation(const std::vector<Var>& f_src, const std::vector<Var>& f_tgt,
                           const LayerMask& mask, const MMDConfig& cfg);

/// Real-pair term plus fake-pair term, each a masked-layer mean; gradients
/// reach the target discriminator side only.
Var discriminator_distillation(const std::vector<Var>& es_real, const std::vector<Var>& et_real,
                               const std::vector<Var>& es_fake, const std::vector<Var>& et_fake,
                               const LayerMask& mask, const MMDConfig& cfg);

/// Masked-layer mean of pooled distances between frozen-critic features of
/// real and generated batches; gradients flow through the fake images.
Var generator_regularization(const std::vector<Var>& es_real, const std::vector<Var>& es_fake,
                             const LayerMask& mask, const MMDConfig& cfg);

Var adversarial_g(const Var& fake_scores);
Var adversarial_d(const Var& fake_scores, const Var& real_scores);

/// Mean over the batch of the squared norm of d(score)/d(pixels), built with
/// a differentiable inner gradient so its own parameter gradient is exact.
Var r1_penalty(const backbone::ParamSet& d_params, const backbone::NetworkConfig& cfg,
               const Tensor& real_images);
double r1_penalty_value(const backbone::GanSnapshot& d_snapshot, const Tensor& real_images);

double total_g(double adv, double dis, double reg, const LossWeights& w);
double total_d(double adv, double dis, double r1, const LossWeights& w, double gamma);

/// Median pairwise Euclidean distance over the joint row set; 1 when all
/// rows coincide.  Not differentiated.
float median_pairwise_distance(const Tensor& A, const Tensor& B);

} // namespace d3t::losses
