#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "d3t/backbone.hpp"
#include "d3t/dataset.hpp"
#include "d3t/extractor.hpp"
#include "d3t/tensor.hpp"

namespace d3t::inversion {

/// Step-decayed optimization schedule for per-image code fitting.
struct InversionSchedule {
    int iterations = 2000;
    float lr_init = 0.05f;
    int decay_every = 500;        // learning rate multiplies by decay_factor
    float lr_decay_factor = 0.1f; // at iterations decay_every, 2*decay_every, ...
    float lambda1 = 5e-5f;        // perceptual term weight
    std::string init = "mapped-noise"; // or "mean-style"
    void validate() const;
    uint64_t hash() const;
};

/// Extended code: one [1, style_dim] style row per synthesis block.
using Code = std::vector<Tensor>;

struct InversionResult {
    Code code;
    Tensor reconstruction; // [3, r, r]
    double final_pixel_loss = 0;
    double final_perceptual_loss = 0;
    std::vector<double> loss_trace; // objective before each update; empty on cache hits
};

/// Summed-square reconstruction objective: ||G(code) - x||^2 plus lambda1
/// times the summed-square distance between extractor features of both.
double inversion_objective(const Code& code, const Tensor& target,
                           const backbone::GanSnapshot& source, const extractor::Extractor& ex,
                           float lambda1);

/// Fits a code for one [3, r, r] target by Adam on the objective; the source
/// snapshot is never modified.  Returns the best code seen.
InversionResult invert(const Tensor& target, const backbone::GanSnapshot& source,
                       const extractor::Extractor& ex, const InversionSchedule& sched,
                       uint64_t seed);

/// One cached transfer ingredient: the target image, its inversion, and the
/// source-generator feature pyramid at the fitted code.
struct TransformedSample {
    uint64_t item_hash = 0;
    Tensor target_image;
    InversionResult inversion;
    std::vector<Tensor> source_features; // synthesis taps at the fitted code
};

/// Cache root override: environment variable D3T_CACHE_DIR beats this value.
std::string resolve_cache_root(const std::string& configured);

/// Directory holding the records for one (source snapshot, schedule) pair.
std::string transform_cache_dir(const std::string& cache_root, const backbone::GanSnapshot& source,
                                const InversionSchedule& sched);

/// Inverts every dataset item, reusing a disk cache keyed by source snapshot
/// hash and schedule hash; warm entries skip optimization entirely.  Order
/// follows the dataset.
std::vector<TransformedSample> precompute_transforms(const data::Dataset& targets,
                                                     const backbone::GanSnapshot& source,
                                                     const extractor::Extractor& ex,
                                                     const InversionSchedule& sched,
                                                     const std::string& cache_root);

} // namespace d3t::inversion
