#include "padim/anomalymap.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "padim/error.hpp"
#include "padim/resample.hpp"

namespace padim {

namespace {

float max_of(const TensorF32& t) { return *std::max_element(t.values().begin(), t.values().end()); }

// Viridis control points, evenly spaced in t.
constexpr std::array<std::array<double, 3>, 9> kViridis{{
    {68, 1, 84},
    {71, 44, 122},
    {59, 81, 139},
    {44, 113, 142},
    {33, 144, 141},
    {39, 173, 129},
    {92, 200, 99},
    {170, 220, 50},
    {253, 231, 37},
}};

}  // namespace

AnomalyMap postprocess(const DistanceMap& dist, std::size_t out_size, double sigma) {
  if (dist.ndim() != 2) throw DataError("postprocess: distance map must be 2-D");
  if (out_size < dist.dim(0) || out_size < dist.dim(1)) {
    throw DataError("postprocess: output size smaller than the distance grid");
  }
  AnomalyMap a;
  a.map = gaussian_blur(upsample_bicubic(dist, out_size, out_size), sigma);
  a.image_score = max_of(a.map);
  return a;
}

AnomalyMap postprocess_ensemble(std::span<const DistanceMap> dists, std::size_t out_size, double sigma) {
  std::vector<DistanceMap> up;
  up.reserve(dists.size());
  for (const auto& d : dists) {
    if (d.ndim() != 2 || out_size < d.dim(0) || out_size < d.dim(1)) {
      throw DataError("postprocess: output size smaller than the distance grid");
    }
    up.push_back(upsample_bicubic(d, out_size, out_size));
  }
  AnomalyMap a;
  a.map = gaussian_blur(ensemble_sum(up), sigma);
  a.image_score = max_of(a.map);
  return a;
}

std::array<std::uint8_t, 3> colormap(double t) {
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  const double pos = t * static_cast<double>(kViridis.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(pos), kViridis.size() - 2);
  const double f = pos - static_cast<double>(i);
  std::array<std::uint8_t, 3> rgb;
  for (int c = 0; c < 3; ++c) {
    const double v = kViridis[i][c] * (1.0 - f) + kViridis[i + 1][c] * f;
    rgb[c] = static_cast<std::uint8_t>(std::lround(v));
  }
  return rgb;
}

RgbImage render_heatmap(const AnomalyMap& a, const HeatmapNormalization& normalize) {
  if (a.map.ndim() != 2) throw DataError("render_heatmap: map must be 2-D");
  for (float v : a.map.values()) {
    if (!std::isfinite(v)) throw DataError("render_heatmap: non-finite map value");
  }
  float lo, hi;
  if (std::holds_alternative<FixedRange>(normalize)) {
    lo = std::get<FixedRange>(normalize).lo;
    hi = std::get<FixedRange>(normalize).hi;
  } else {
    const auto [mn, mx] = std::minmax_element(a.map.values().begin(), a.map.values().end());
    lo = *mn;
    hi = *mx;
  }
  const double range = static_cast<double>(hi) - lo;
  RgbImage img(a.map.dim(1), a.map.dim(0));
  for (std::size_t i = 0; i < a.map.size(); ++i) {
    const double t = range > 0.0 ? (a.map[i] - lo) / range : 0.0;
    const auto rgb = colormap(t);
    std::copy(rgb.begin(), rgb.end(), &img.pixels[3 * i]);
  }
  return img;
}

RgbImage overlay(const RgbImage& image, const RgbImage& heatmap, double alpha) {
  if (image.width != heatmap.width || image.height != heatmap.height) throw DataError("overlay: size mismatch");
  alpha = std::clamp(alpha, 0.0, 1.0);
  RgbImage out = image;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * image.pixels[i] + alpha * heatmap.pixels[i]));
  }
  return out;
}

}  // namespace padim
