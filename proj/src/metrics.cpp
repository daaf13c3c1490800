#include "padim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "padim/error.hpp"

namespace padim {

RocCurve roc_auc(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DataError("roc_auc: scores and labels differ in length");
  std::uint64_t n_pos = 0;
  for (auto l : labels) n_pos += l ? 1 : 0;
  const std::uint64_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("roc_auc: single-class input (both labels are required)");
  for (float s : scores) {
    if (std::isnan(s)) throw DataError("roc_auc: NaN score");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.thresholds.push_back(std::numeric_limits<double>::infinity());
  curve.fpr.push_back(0.0);
  curve.tpr.push_back(0.0);
  // Twice the trapezoid area in count units; exact in integers.
  std::uint64_t tp = 0, fp = 0, area2 = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const float s = scores[order[i]];
    const std::uint64_t tp_prev = tp, fp_prev = fp;
    while (i < order.size() && scores[order[i]] == s) {
      if (labels[order[i]]) ++tp;
      else ++fp;
      ++i;
    }
    area2 += (fp - fp_prev) * (tp + tp_prev);
    curve.thresholds.push_back(s);
    curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(n_neg));
    curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(n_pos));
  }
  curve.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
  return curve;
}

std::size_t label_components(std::size_t height, std::size_t width, std::span<const std::uint8_t> binary,
                             std::span<std::int32_t> labels) {
  if (binary.size() != height * width || labels.size() != height * width) {
    throw DataError("label_components: size mismatch");
  }
  std::fill(labels.begin(), labels.end(), 0);
  std::int32_t next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < binary.size(); ++start) {
    if (!binary[start] || labels[start]) continue;
    labels[start] = ++next;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t idx = stack.back();
      stack.pop_back();
      const auto r = static_cast<std::ptrdiff_t>(idx / width);
      const auto c = static_cast<std::ptrdiff_t>(idx % width);
      for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
        for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
          const auto rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(height) || cc >= static_cast<std::ptrdiff_t>(width)) {
            continue;
          }
          const auto n = static_cast<std::size_t>(rr) * width + static_cast<std::size_t>(cc);
          if (binary[n] && !labels[n]) {
            labels[n] = next;
            stack.push_back(n);
          }
        }
      }
    }
  }
  return static_cast<std::size_t>(next);
}

GroundTruthMask GroundTruthMask::from_binary(std::size_t height, std::size_t width, std::span<const std::uint8_t> binary) {
  GroundTruthMask m;
  m.height = height;
  m.width = width;
  m.labels.assign(height * width, 0);
  m.regions = label_components(height, width, binary, m.labels);
  return m;
}

GroundTruthMask GroundTruthMask::from_gray(const GrayImage& mask, std::uint8_t threshold) {
  std::vector<std::uint8_t> binary(mask.pixels.size());
  for (std::size_t i = 0; i < binary.size(); ++i) binary[i] = mask.pixels[i] > threshold ? 1 : 0;
  return from_binary(mask.height, mask.width, binary);
}

GroundTruthMask GroundTruthMask::empty(std::size_t height, std::size_t width) {
  GroundTruthMask m;
  m.height = height;
  m.width = width;
  m.labels.assign(height * width, 0);
  return m;
}

std::vector<std::size_t> GroundTruthMask::region_sizes() const {
  std::vector<std::size_t> sizes(regions, 0);
  for (auto l : labels) {
    if (l) ++sizes[static_cast<std::size_t>(l - 1)];
  }
  return sizes;
}

double normalized_integral(std::span<const double> x, std::span<const double> y, double limit) {
  if (x.size() != y.size() || x.empty()) throw DataError("normalized_integral: bad curve");
  if (!(limit > 0.0)) throw DataError("normalized_integral: limit must be > 0");
  double area = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    const double x0 = x[i - 1], x1 = x[i];
    if (x0 >= limit) break;
    if (x1 <= limit) {
      area += (x1 - x0) * (y[i - 1] + y[i]) / 2.0;
    } else {
      const double y_lim = y[i - 1] + (y[i] - y[i - 1]) * (limit - x0) / (x1 - x0);
      area += (limit - x0) * (y[i - 1] + y_lim) / 2.0;
      break;
    }
  }
  // A curve that stops short of the limit is held flat at its last value.
  if (x.back() < limit) area += (limit - x.back()) * y.back();
  return area / limit;
}

ProCurve pro_score(std::span<const TensorF32> maps, std::span<const GroundTruthMask> masks, double fpr_limit,
                   std::size_t steps) {
  if (maps.size() != masks.size()) throw DataError("pro_score: maps and masks differ in count");
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw DataError("pro_score: fpr_limit must be in (0, 1]");

  struct Pixel {
    float score;
    std::uint32_t region;  // 0 = normal, otherwise global region id (1-based)
  };
  std::vector<Pixel> pixels;
  std::vector<double> inv_size;  // indexed by region id - 1
  std::size_t n_normal = 0;
  for (std::size_t m = 0; m < maps.size(); ++m) {
    const auto& map = maps[m];
    const auto& mask = masks[m];
    if (map.ndim() != 2 || map.dim(0) != mask.height || map.dim(1) != mask.width) {
      throw DataError("pro_score: map and mask sizes differ for image " + std::to_string(m));
    }
    const auto base = static_cast<std::uint32_t>(inv_size.size());
    for (auto s : mask.region_sizes()) inv_size.push_back(1.0 / static_cast<double>(s));
    for (std::size_t i = 0; i < map.size(); ++i) {
      if (std::isnan(map[i])) throw DataError("pro_score: NaN score");
      const auto l = mask.labels[i];
      pixels.push_back({map[i], l ? base + static_cast<std::uint32_t>(l) : 0u});
      if (!l) ++n_normal;
    }
  }
  const std::size_t n_regions = inv_size.size();
  if (n_regions == 0) throw DataError("pro_score: no anomalous regions");
  if (n_normal == 0) throw DataError("pro_score: no normal pixels");

  std::sort(pixels.begin(), pixels.end(), [](const Pixel& a, const Pixel& b) { return a.score > b.score; });

  ProCurve curve;
  curve.fpr_limit = fpr_limit;
  std::size_t fp = 0;
  double overlap_sum = 0.0;
  auto emit = [&] {
    curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(n_normal));
    curve.overlap.push_back(overlap_sum / static_cast<double>(n_regions));
  };

  const double hi = pixels.front().score;
  const double lo = pixels.back().score;
  std::size_t next_step = 0;
  std::size_t i = 0;
  while (i < pixels.size()) {
    const float s = pixels[i].score;
    while (i < pixels.size() && pixels[i].score == s) {
      if (pixels[i].region) overlap_sum += inv_size[pixels[i].region - 1];
      else ++fp;
      ++i;
    }
    if (steps == 0) {
      emit();
      continue;
    }
    // Emit one point per evenly spaced threshold t once every score >= t is in.
    const double next_score = i < pixels.size() ? static_cast<double>(pixels[i].score) : -INFINITY;
    while (next_step <= steps) {
      const double t = steps ? hi - (hi - lo) * static_cast<double>(next_step) / static_cast<double>(steps) : lo;
      if (next_score >= t) break;
      emit();
      ++next_step;
    }
  }
  curve.fpr.insert(curve.fpr.begin(), 0.0);
  curve.overlap.insert(curve.overlap.begin(), curve.overlap.front());
  curve.pro_score = normalized_integral(curve.fpr, curve.overlap, fpr_limit);
  return curve;
}

ProCurve pro_score(std::span<const AnomalyMap> maps, std::span<const GroundTruthMask> masks, double fpr_limit,
                   std::size_t steps) {
  std::vector<TensorF32> raw;
  raw.reserve(maps.size());
  for (const auto& a : maps) raw.push_back(a.map);
  return pro_score(std::span<const TensorF32>(raw), masks, fpr_limit, steps);
}

RocCurve pixel_auroc(std::span<const TensorF32> maps, std::span<const GroundTruthMask> masks) {
  if (maps.size() != masks.size()) throw DataError("pixel_auroc: maps and masks differ in count");
  std::vector<float> scores;
  std::vector<std::uint8_t> labels;
  for (std::size_t m = 0; m < maps.size(); ++m) {
    if (maps[m].ndim() != 2 || maps[m].dim(0) != masks[m].height || maps[m].dim(1) != masks[m].width) {
      throw DataError("pixel_auroc: map and mask sizes differ for image " + std::to_string(m));
    }
    scores.insert(scores.end(), maps[m].values().begin(), maps[m].values().end());
    for (auto l : masks[m].labels) labels.push_back(l ? 1 : 0);
  }
  return roc_auc(scores, labels);
}

}  // namespace padim
