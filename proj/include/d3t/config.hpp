#pragma once

#include <string>
#include <utility>
#include <vector>

#include "d3t/backbone.hpp"
#include "d3t/inversion.hpp"
#include "d3t/trainer.hpp"

namespace d3t::config {

struct MetricsConfig {
    int n_fake = 256;          // generated sample count per evaluation
    long eval_every = 100;     // 0 disables periodic evaluation
    uint64_t extractor_seed = 0;
    void validate() const;
};

struct DataConfig {
    std::string source_dir; // no defaults: paths must be stated explicitly
    std::string target_dir;
    std::string cache_dir;  // empty -> "d3t-cache" (D3T_CACHE_DIR overrides both)
};

/// Whole-run configuration; every field has a default except the data paths.
struct RunConfig {
    backbone::NetworkConfig network;
    trainer::TransferConfig transfer;
    inversion::InversionSchedule inversion;
    MetricsConfig metrics;
    DataConfig data;
    void validate() const;
};

/// Parses "key = value" / "key value" lines ('#' comments); unknown keys and
/// unparsable values are all collected before the error is raised.
RunConfig load_config(const std::string& path);

/// Applies dotted-path overrides ("transfer.lr_g=0.002"), again collecting
/// every offending key.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& sets);

/// Full canonical echo; feeding it back through load_config reproduces the
/// configuration exactly.
std::string write_config(const RunConfig& cfg);

} // namespace d3t::config
