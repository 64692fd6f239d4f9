#pragma once

#include <string>

#include "d3t/tensor.hpp"

namespace d3t::img {

/// Decodes a PNG to [3, h, w] floats in [0, 1]; palette, grayscale, 16-bit,
/// and alpha inputs are normalized to 8-bit RGB first.
Tensor read_png(const std::string& path);

/// Writes [3, h, w] floats in [-1, 1] as 8-bit RGB with a fixed compression
/// level, so equal tensors produce byte-identical files.
void write_png(const std::string& path, const Tensor& image);

/// Tiles [n, 3, r, r] row-major into [3, rows*r, cols*r]; short final rows
/// are padded with black.
Tensor compose_grid(const Tensor& batch, int cols);

/// Center-crops to square and box-resamples to [3, size, size].
Tensor crop_resize(const Tensor& image, int size);

} // namespace d3t::img
