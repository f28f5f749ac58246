#pragma once

// 8-bit PNG reading and writing (libpng simplified API).

#include <filesystem>

#include "sauge/backbone.hpp"
#include "sauge/tensor.hpp"

namespace sauge {

/// RGB image as (3, H, W) in [0, 1]. Grayscale and palette files are expanded.
Image read_png_rgb(const std::filesystem::path& path);
/// Single-channel mask; pixels > 127 are edges.
BinaryMap read_png_mask(const std::filesystem::path& path);
/// Gray levels divided by 255.
ProbMap read_png_gray(const std::filesystem::path& path);

/// Writes round(255 * p) with p clamped to [0, 1].
void write_png_gray(const std::filesystem::path& path, const ProbMap& map);
void write_png_mask(const std::filesystem::path& path, const BinaryMap& mask);
void write_png_rgb(const std::filesystem::path& path, const Image& image);

}  // namespace sauge
