#pragma once

#include <string>
#include <vector>

#include "d3t/dataset.hpp"
#include "d3t/extractor.hpp"
#include "d3t/metrics.hpp"

namespace d3t::cli {

/// Dispatches one subcommand (pretrain, invert, transfer, eval, sample,
/// interpolate, make-toys, dump-features) with the shared flag set; returns
/// the process exit code.  Failures print a one-line JSON error record on
/// stderr.  `args` excludes the program name.
int run_cli(const std::vector<std::string>& args);

/// Real-side distribution stats with a disk cache keyed by dataset hash and
/// extractor id.
metrics::GaussianStats real_stats_cached(const data::Dataset& ds, const extractor::Extractor& ex,
                                         const std::string& cache_root);

} // namespace d3t::cli
