#pragma once

// Small image-processing kernels on single-channel maps. Borders are replicated.

#include <vector>

#include "sauge/tensor.hpp"

namespace sauge::imgproc {

ProbMap gaussian_blur(const ProbMap& in, double sigma);

struct Gradient {
    ProbMap dx;  // d/dcol
    ProbMap dy;  // d/drow
};
/// 3x3 Sobel responses.
Gradient sobel(const ProbMap& in);

/// Separable convolution with a 1-D kernel of odd length, applied along rows then columns.
ProbMap separable(const ProbMap& in, const std::vector<double>& row_kernel, const std::vector<double>& col_kernel);

/// Area-weighted resampling (exact box averaging for any size ratio).
ProbMap resize_area(const ProbMap& in, int rows, int cols);
/// Bilinear resampling with half-pixel centers.
ProbMap resize_bilinear(const ProbMap& in, int rows, int cols);
/// Nearest-neighbour resampling with half-pixel centers.
BinaryMap resize_nearest(const BinaryMap& in, int rows, int cols);

/// 4-connected component of `mask` containing (r, c); empty map if the seed is off.
BinaryMap flood_fill(const BinaryMap& mask, int r, int c);

ProbMap channel(const Tensor& chw, int c);
void set_channel(Tensor& chw, int c, const ProbMap& m);

}  // namespace sauge::imgproc
