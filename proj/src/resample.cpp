#include "padim/resample.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "padim/error.hpp"

namespace padim {

namespace {

constexpr double kCubicA = -0.5;

// Per-output-sample window of input taps.
struct ResampleTaps {
  std::vector<std::size_t> start;
  std::vector<std::size_t> count;
  std::vector<double> weights;  // out_size x stride
  std::size_t stride = 0;
};

ResampleTaps compute_taps(std::size_t in_size, std::size_t out_size) {
  const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
  const double filter_scale = std::max(scale, 1.0);
  const double support = 2.0 * filter_scale;
  ResampleTaps taps;
  taps.stride = static_cast<std::size_t>(std::ceil(support)) * 2 + 1;
  taps.start.resize(out_size);
  taps.count.resize(out_size);
  taps.weights.assign(out_size * taps.stride, 0.0);
  for (std::size_t o = 0; o < out_size; ++o) {
    const double center = (static_cast<double>(o) + 0.5) * scale;
    const auto lo = static_cast<std::ptrdiff_t>(std::floor(center - support + 0.5));
    const auto hi = static_cast<std::ptrdiff_t>(std::floor(center + support + 0.5));
    const std::size_t begin = static_cast<std::size_t>(std::max<std::ptrdiff_t>(lo, 0));
    const std::size_t end = static_cast<std::size_t>(std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(in_size)));
    double* w = &taps.weights[o * taps.stride];
    double total = 0.0;
    for (std::size_t x = begin; x < end; ++x) {
      const double v = cubic_kernel((static_cast<double>(x) - center + 0.5) / filter_scale);
      w[x - begin] = v;
      total += v;
    }
    if (total != 0.0) {
      for (std::size_t k = 0; k < end - begin; ++k) w[k] /= total;
    }
    taps.start[o] = begin;
    taps.count[o] = end - begin;
  }
  return taps;
}

}  // namespace

double cubic_kernel(double x) {
  x = std::abs(x);
  if (x < 1.0) return ((kCubicA + 2.0) * x - (kCubicA + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * kCubicA;
  return 0.0;
}

void resize_plane_bicubic(std::span<const float> in, std::size_t in_h, std::size_t in_w, std::span<float> out,
                          std::size_t out_h, std::size_t out_w) {
  if (in.size() != in_h * in_w || out.size() != out_h * out_w) throw DataError("resize: buffer size mismatch");
  if (in_h == out_h && in_w == out_w) {
    std::copy(in.begin(), in.end(), out.begin());
    return;
  }
  const auto htaps = compute_taps(in_w, out_w);
  const auto vtaps = compute_taps(in_h, out_h);

  // Horizontal pass into double to keep the two passes' rounding in one place.
  std::vector<double> tmp(in_h * out_w);
  for (std::size_t y = 0; y < in_h; ++y) {
    const float* row = &in[y * in_w];
    for (std::size_t o = 0; o < out_w; ++o) {
      const double* w = &htaps.weights[o * htaps.stride];
      double acc = 0.0;
      for (std::size_t k = 0; k < htaps.count[o]; ++k) acc += w[k] * row[htaps.start[o] + k];
      tmp[y * out_w + o] = acc;
    }
  }
  for (std::size_t o = 0; o < out_h; ++o) {
    const double* w = &vtaps.weights[o * vtaps.stride];
    for (std::size_t x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < vtaps.count[o]; ++k) acc += w[k] * tmp[(vtaps.start[o] + k) * out_w + x];
      out[o * out_w + x] = static_cast<float>(acc);
    }
  }
}

TensorF32 upsample_bicubic(const TensorF32& map, std::size_t out_rows, std::size_t out_cols) {
  if (map.ndim() != 2) throw DataError("upsample_bicubic: expected a 2-D map");
  if (out_rows < 1 || out_cols < 1) throw ConfigError("upsample_bicubic: output dims must be >= 1");
  const auto rows = map.dim(0);
  const auto cols = map.dim(1);
  if (rows < 2 || cols < 2) throw DataError("upsample_bicubic: input must be at least 2x2");
  if (rows == out_rows && cols == out_cols) return map;
  TensorF32 out({out_rows, out_cols});
  resize_plane_bicubic(map.values(), rows, cols, out.values(), out_rows, out_cols);
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("gaussian blur: sigma must be > 0");
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : k) v /= total;
  return k;
}

std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  const std::ptrdiff_t period = 2 * n;
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

TensorF32 gaussian_blur(const TensorF32& map, double sigma) {
  if (map.ndim() != 2) throw DataError("gaussian_blur: expected a 2-D map");
  const auto kernel = gaussian_kernel(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const auto rows = static_cast<std::ptrdiff_t>(map.dim(0));
  const auto cols = static_cast<std::ptrdiff_t>(map.dim(1));

  std::vector<double> tmp(map.size());
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const float* row = map.data() + r * cols;
    for (std::ptrdiff_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * row[reflect_index(c + k, cols)];
      }
      tmp[static_cast<std::size_t>(r * cols + c)] = acc;
    }
  }
  TensorF32 out(map.shape());
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    for (std::ptrdiff_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[static_cast<std::size_t>(reflect_index(r + k, rows) * cols + c)];
      }
      out[static_cast<std::size_t>(r * cols + c)] = static_cast<float>(acc);
    }
  }
  return out;
}

}  // namespace padim
