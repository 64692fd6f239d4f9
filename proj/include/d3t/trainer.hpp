#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "d3t/augment.hpp"
#include "d3t/backbone.hpp"
#include "d3t/dataset.hpp"
#include "d3t/inversion.hpp"
#include "d3t/losses.hpp"

namespace d3t::trainer {

struct TransferConfig {
    losses::LossWeights weights;
    losses::MMDConfig mmd;
    losses::LayerMask mask; // empty selections fall back to the default mask
    int batch_size = 16;
    float lr_g = 0.001f;
    float lr_d = 0.002f;
    float adam_beta1 = 0.f;
    float adam_beta2 = 0.99f;
    int total_steps = 500;
    augment::AugmentPolicy augment;
    float r1_gamma = 1.f;
    int r1_every = 16;
    uint64_t seed = 0;
    int snapshot_every = 100;
    int freeze_d_layers = 0; // zero the learning rate on this many input-side blocks
    void validate() const;
};

/// Per-step loss ledger; the totals reconstruct from the components and the
/// configured weights.
struct StepRecord {
    long step = 0;
    double loss_g_total = 0, loss_g_adv = 0, loss_g_dis = 0, loss_g_reg = 0;
    double loss_d_total = 0, loss_d_adv = 0, loss_d_dis = 0, loss_r1 = 0;
};

struct TrainCallbacks {
    std::function<void(const StepRecord&)> on_step;
    /// Invoked every snapshot_every steps and at the end.
    std::function<void(const backbone::GanSnapshot&)> on_snapshot;
    /// Returns a distribution score (lower is better); invoked every
    /// eval_every steps and at the end when eval_every > 0.
    std::function<double(const backbone::GanSnapshot&, long step)> evaluate;
    long eval_every = 0;
};

struct TransferResult {
    backbone::GanSnapshot final_snapshot;
    backbone::GanSnapshot best_snapshot; // lowest evaluate() score, else final
    double best_score = 0;
    long best_step = 0;
    std::vector<StepRecord> records;
};

/// Adversarial training with lazy gradient penalty from the given snapshot
/// (pass an init_snapshot result to start fresh).  Distillation weights are
/// ignored; a non-finite loss aborts, leaving the last emitted snapshot as
/// the survivor.
backbone::GanSnapshot pretrain(const data::Dataset& reals, const backbone::GanSnapshot& start,
                               const TransferConfig& cfg, const TrainCallbacks& cb = {});

/// Few-shot adaptation of a source pair: each step updates the discriminator
/// (adversarial + distillation from the frozen source critic + lazy gradient
/// penalty), then the generator (adversarial + distillation against cached
/// source features + frozen-critic feature regularization).  The source
/// snapshot is read-only throughout.
TransferResult transfer(const data::Dataset& targets, const backbone::GanSnapshot& source,
                        const std::vector<inversion::TransformedSample>& cache,
                        const TransferConfig& cfg, const TrainCallbacks& cb = {});

} // namespace d3t::trainer
