#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "d3t/backbone.hpp"
#include "d3t/extractor.hpp"
#include "d3t/tensor.hpp"

namespace d3t::metrics {

/// Sample mean and covariance of a feature matrix, held in double precision.
struct GaussianStats {
    int d = 0;
    long count = 0;
    std::vector<double> mean; // [d]
    std::vector<double> cov;  // [d, d] row-major, symmetric
};

struct FIDReport {
    double score = 0;
    std::string extractor_id;
    long n_real = 0;
    long n_fake = 0;
    long snapshot_step = 0;
};

/// Mean and 1/(n-1) covariance (symmetrized) of rows; n >= 2 required.
GaussianStats gaussian_stats(const Tensor& features);

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// are clamped to zero.  m is row-major [d, d].
std::vector<double> sym_sqrt(const std::vector<double>& m, int d);

/// Frechet distance between Gaussians: ||mu_a - mu_b||^2 +
/// Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2).  When either covariance is
/// near-singular (min eigenvalue < 1e-6) both get the same 1e-6 ridge, so
/// well-conditioned closed-form cases stay exact.
double fid(const GaussianStats& a, const GaussianStats& b);

/// Generates n_fake images from seeded noise in fixed batches, extracts
/// descriptors, and scores against precomputed real-side stats.
FIDReport evaluate_fid(const backbone::GanSnapshot& snapshot, const GaussianStats& real_stats,
                       int n_fake, const extractor::Extractor& ex, uint64_t seed);

/// Descriptor rows for a generated set; used by evaluate_fid and callers
/// that cache real-side stats.
Tensor generated_descriptors(const backbone::GanSnapshot& snapshot, int n,
                             const extractor::Extractor& ex, uint64_t seed);

/// Pooled discriminator features of `images` at a 1-based block index.
Tensor discriminator_features(const backbone::GanSnapshot& snapshot, const Tensor& images,
                              int layer);

/// Delimited text matrix with one metadata header line ("# ..." prefix).
void write_feature_matrix(const std::string& path, const Tensor& matrix,
                          const std::string& metadata);

} // namespace d3t::metrics
