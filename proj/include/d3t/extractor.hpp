#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "d3t/autodiff.hpp"
#include "d3t/tensor.hpp"

namespace d3t::extractor {

using ad::Var;

/// Fixed randomly-initialized convolutional stack with four tap depths.
/// Weights are frozen forever: they feed the perceptual term of the inversion
/// objective and the descriptor used for distribution metrics, both of which
/// only need a fixed multi-scale feature map.
struct Extractor {
    std::string id;
    std::map<std::string, Tensor> params;

    static Extractor frozen_random(uint64_t seed = 0);

    /// Taps after each stage's nonlinearity; input [n, 3, h, w], h = w >= 16
    /// recommended (each stage halves the spatial size).
    std::vector<Var> features(const Var& images) const;
    std::vector<Tensor> features_t(const Tensor& images) const;

    /// Global-average-pooled taps concatenated per image: [n, descriptor_dim()].
    Tensor descriptors(const Tensor& images) const;
    int descriptor_dim() const;
};

} // namespace d3t::extractor
