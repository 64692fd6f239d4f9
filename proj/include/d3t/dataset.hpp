#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "d3t/tensor.hpp"

namespace d3t::data {

/// Decoded image collection in model range [-1, 1], one [3, r, r] slice per
/// item, ordered by filename.
struct Dataset {
    int resolution = 0;
    Tensor images;                     // [n, 3, r, r]
    std::vector<std::string> names;    // source filenames, sorted
    std::vector<uint64_t> item_hashes; // hash of each processed slice

    long count() const { return names.empty() ? 0 : images.dim(0); }
    Tensor item(long i) const;
    /// Order-dependent fold of resolution and item hashes.
    uint64_t hash() const;
};

/// Reads every .png under dir (non-recursive), center-crops, resizes, and
/// maps to [-1, 1].  Unreadable files are skipped with a warning on stderr;
/// an empty result is an error.
Dataset ingest_dataset(const std::string& dir, int resolution);

struct ToySpec {
    int resolution = 32;
    int source_count = 5000;
    int target_count = 100;
};

/// Renders the synthetic domain pair into out_dir/source and out_dir/target:
/// anti-aliased filled ellipses vs. cross shapes, deterministic in seed.
void make_toy_domains(const ToySpec& spec, uint64_t seed, const std::string& out_dir);

} // namespace d3t::data
