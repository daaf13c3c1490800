/**
 * @file resample.hpp
 * @brief Bicubic resampling and Gaussian smoothing of float maps.
 *
 * Maps are TensorF32 of shape [rows, cols]. The bicubic kernel is
 * Catmull-Rom (a = -0.5) with pixel-center alignment; when shrinking, the
 * kernel support is widened by the scale factor (area-aware, no aliasing).
 */
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "padim/tensor.hpp"

namespace padim {

/// Catmull-Rom cubic convolution kernel, a = -0.5.
double cubic_kernel(double x);

/// Resize one plane of size in_h x in_w into out (out_h x out_w).
void resize_plane_bicubic(std::span<const float> in, std::size_t in_h, std::size_t in_w, std::span<float> out,
                          std::size_t out_h, std::size_t out_w);

/// Upsample (or resize) a [rows, cols] map. Identity sizes return a bit-equal copy.
/// Throws DataError when the input is smaller than 2x2 or an output size is zero.
TensorF32 upsample_bicubic(const TensorF32& map, std::size_t out_rows, std::size_t out_cols);

/// Normalized 1-D Gaussian taps of radius ceil(4 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Half-sample symmetric reflection of an arbitrary index into [0, n).
std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n);

/// Separable Gaussian blur of a [rows, cols] map with reflect borders.
/// Throws ConfigError when sigma <= 0.
TensorF32 gaussian_blur(const TensorF32& map, double sigma);

}  // namespace padim
