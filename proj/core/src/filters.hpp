#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace breechmark::detail {

/// Normalized Gaussian taps over [-radius, radius], radius = ceil(4 sigma).
std::vector<double> gaussian_taps(double sigma);

/// Mask-aware (normalized-convolution) separable Gaussian smoothing of a
/// row-major grid. Returns sum(w * v * m) / sum(w * m); samples whose
/// weighted support is empty come back as 0.
std::vector<double> masked_gaussian(const std::vector<double>& values, const std::vector<std::uint8_t>& mask,
                                    std::size_t rows, std::size_t cols, double sigma);

/// Bilinear sample at fractional (row, col); false if a neighbour with
/// non-zero weight is out of bounds or masked.
bool bilinear_masked(const std::vector<double>& values, const std::vector<std::uint8_t>& mask, std::size_t rows,
                     std::size_t cols, double row, double col, double& out);

}  // namespace breechmark::detail
