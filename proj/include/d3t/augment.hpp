#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "d3t/autodiff.hpp"

namespace d3t::augment {

using ad::Var;

/// Ordered differentiable ops applied inside each training step.  An empty
/// list is the identity policy.
struct AugmentPolicy {
    std::vector<std::string> ops; // subset of {"color", "translation", "cutout"}
    bool empty() const { return ops.empty(); }
    void validate() const;
};

/// Parses "color,translation,cutout" (possibly empty, or "none").
AugmentPolicy parse_policy(const std::string& s);
std::string policy_string(const AugmentPolicy& p);

/// Applies the policy with randomness drawn only from (step_seed, op, slot),
/// so real and fake batches of equal size in one step receive identical
/// transforms per sample slot.  Differentiable with respect to x throughout.
Var diff_augment(const Var& x, const AugmentPolicy& policy, uint64_t step_seed);

} // namespace d3t::augment
