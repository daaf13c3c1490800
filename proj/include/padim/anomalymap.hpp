/**
 * @file anomalymap.hpp
 * @brief Full-resolution anomaly maps, image scores and heatmap rendering.
 */
#pragma once

#include <variant>

#include "padim/gaussian.hpp"
#include "padim/image.hpp"
#include "padim/tensor.hpp"

namespace padim {

inline constexpr double kDefaultSigma = 4.0;

struct AnomalyMap {
  TensorF32 map;  // [S, S], raw Mahalanobis units
  float image_score = 0.0f;  // max over map
};

/// Bicubic upsample to out_size x out_size, then Gaussian blur; the image
/// score is the max of the blurred map. Throws DataError when out_size is
/// smaller than the distance grid, ConfigError when sigma <= 0.
AnomalyMap postprocess(const DistanceMap& dist, std::size_t out_size, double sigma = kDefaultSigma);

/// Sum of per-layer distance maps, each upsampled to out_size first, then blurred.
AnomalyMap postprocess_ensemble(std::span<const DistanceMap> dists, std::size_t out_size, double sigma = kDefaultSigma);

struct PerImageNormalization {};
struct FixedRange {
  float lo = 0.0f;
  float hi = 1.0f;
};
using HeatmapNormalization = std::variant<PerImageNormalization, FixedRange>;

/// Viridis-style colormap (dark blue-violet for low, yellow for high) applied
/// after normalization. Visualization only; scores are never rescaled.
RgbImage render_heatmap(const AnomalyMap& a, const HeatmapNormalization& normalize = PerImageNormalization{});

/// Colormap lookup for t in [0, 1].
std::array<std::uint8_t, 3> colormap(double t);

/// Alpha blend of a heatmap over an image of the same size.
RgbImage overlay(const RgbImage& image, const RgbImage& heatmap, double alpha = 0.5);

}  // namespace padim
