#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "d3t/autodiff.hpp"
#include "d3t/tensor.hpp"

namespace d3t::backbone {

using ad::Var;

struct NetworkConfig {
    int resolution = 64;
    int style_dim = 512;
    int mapping_depth = 4;
    int channel_base = 64;
    bool noise_injection = true;

    /// Synthesis / discriminator resolution blocks: log2(resolution) - 1.
    int layer_count() const;
    /// Channel width of the block operating at spatial size r, capped at 256.
    int channels_at(int r) const;
    void validate() const;
    bool operator==(const NetworkConfig&) const = default;
};

enum class Role { Source, Target };

/// Immutable bundle of named parameters; treated as a value.  Map order is
/// the canonical parameter order used for hashing and serialization.
struct GanSnapshot {
    NetworkConfig config;
    Role role = Role::Source;
    long step = 0;
    std::map<std::string, Tensor> params;
};

GanSnapshot init_snapshot(const NetworkConfig& cfg, uint64_t seed, Role role);
GanSnapshot init_target_from_source(const GanSnapshot& source);

/// Order-dependent FNV fold over names, shapes, and raw parameter bytes.
uint64_t params_hash(const std::map<std::string, Tensor>& params);
uint64_t snapshot_hash(const GanSnapshot& s);

/// Names and shapes the snapshot must carry for a given config.
std::map<std::string, std::vector<int>> param_layout(const NetworkConfig& cfg);
void check_layout(const GanSnapshot& s);

/// Graph-building view of a snapshot: one Var per parameter, either leaves
/// (training) or constants (inference / frozen teacher).
struct ParamSet {
    std::map<std::string, Var> v;
    static ParamSet leaves(const GanSnapshot& s);
    static ParamSet constants(const GanSnapshot& s);
    const Var& at(const std::string& name) const;
};

/// z [n, style_dim] -> w [n, style_dim] through the mapping network.
Var map_noise(const ParamSet& p, const NetworkConfig& cfg, const Var& z);

struct GenOut {
    Var image;              // [n, 3, res, res], range [-1, 1]
    std::vector<Var> taps;  // one per block, spatial sizes 4, 8, ..., res
};

/// Styles: one [n, style_dim] entry per block (extended code); pass the same
/// Var repeatedly to broadcast a single style.  Injected noise is derived
/// from noise_seed only and shared across the batch.
GenOut generate(const ParamSet& p, const NetworkConfig& cfg, const std::vector<Var>& styles,
                uint64_t noise_seed);

struct DiscOut {
    Var scores;             // [n], unbounded critic outputs
    std::vector<Var> taps;  // one per block, spatial sizes res, res/2, ..., 4
};

DiscOut discriminate(const ParamSet& p, const NetworkConfig& cfg, const Var& images);

// -- plain-tensor conveniences (no tape) ------------------------------------

struct SynthResult {
    Tensor image;
    std::vector<Tensor> taps;
};

/// W+ code for a batch: styles[i] is [n, style_dim] for block i.
SynthResult synthesize(const GanSnapshot& s, const std::vector<Tensor>& styles,
                       uint64_t noise_seed);
/// Sample n images from seeded unit-Gaussian noise via the mapping network.
SynthResult sample_images(const GanSnapshot& s, int n, uint64_t z_seed, uint64_t noise_seed);
Tensor map_noise_t(const GanSnapshot& s, const Tensor& z);

} // namespace d3t::backbone
