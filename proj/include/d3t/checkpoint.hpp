#pragma once

#include <string>

#include "d3t/backbone.hpp"

namespace d3t::ckpt {

/// Writes a snapshot: text header (format version, network config, role,
/// step, content hash) followed by every parameter array as little-endian
/// 32-bit floats in canonical (name-sorted) order.
void save_checkpoint(const std::string& path, const backbone::GanSnapshot& s);

/// Reads a checkpoint and verifies the stored content hash against the
/// loaded parameters; load(save(s)) is parameter-wise bit-identical.
backbone::GanSnapshot load_checkpoint(const std::string& path);

} // namespace d3t::ckpt
