/**
 * @file metrics.hpp
 * @brief Threshold-free evaluation: ROC/AUROC and the per-region-overlap score.
 *
 * Conventions:
 *  - a pixel/image is predicted anomalous when score >= threshold;
 *  - equal scores collapse into a single threshold step;
 *  - PRO pools false positives over all normal pixels of all images and
 *    labels ground-truth regions with 8-connectivity;
 *  - the PRO curve gets (0, overlap at the highest threshold) prepended and
 *    is integrated with the trapezoid rule up to fpr_limit (interpolating
 *    linearly at the limit), then divided by fpr_limit.
 */
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "padim/anomalymap.hpp"
#include "padim/image.hpp"
#include "padim/tensor.hpp"

namespace padim {

struct RocCurve {
  std::vector<double> thresholds;  // descending; +inf, then one per distinct score
  std::vector<double> fpr;         // starts at 0, ends at 1
  std::vector<double> tpr;
  double auc = 0.0;
};

/// Exact trapezoidal AUROC over all distinct thresholds. Throws DataError
/// when only one class is present or sizes differ.
RocCurve roc_auc(std::span<const float> scores, std::span<const std::uint8_t> labels);

/// Image-level AUROC of image scores (max of each anomaly map).
inline RocCurve image_auroc(std::span<const float> image_scores, std::span<const std::uint8_t> labels) {
  return roc_auc(image_scores, labels);
}

/// Binary mask with 8-connected component labels.
struct GroundTruthMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> labels;  // 0 = normal, 1..regions
  std::size_t regions = 0;

  /// Pixels > threshold are anomalous.
  static GroundTruthMask from_gray(const GrayImage& mask, std::uint8_t threshold = 127);
  static GroundTruthMask from_binary(std::size_t height, std::size_t width, std::span<const std::uint8_t> binary);
  static GroundTruthMask empty(std::size_t height, std::size_t width);

  bool anomalous(std::size_t i) const { return labels[i] != 0; }
  std::vector<std::size_t> region_sizes() const;
};

/// Label 8-connected foreground components; returns the region count.
std::size_t label_components(std::size_t height, std::size_t width, std::span<const std::uint8_t> binary,
                             std::span<std::int32_t> labels);

struct ProCurve {
  std::vector<double> fpr;      // nondecreasing, first entry 0
  std::vector<double> overlap;  // mean per-region overlap at each fpr
  double fpr_limit = 0.3;
  double pro_score = 0.0;
};

/// steps == 0 sweeps every distinct score; steps > 0 uses steps + 1 evenly
/// spaced thresholds between the max and min score.
ProCurve pro_score(std::span<const TensorF32> maps, std::span<const GroundTruthMask> masks, double fpr_limit = 0.3,
                   std::size_t steps = 0);
ProCurve pro_score(std::span<const AnomalyMap> maps, std::span<const GroundTruthMask> masks, double fpr_limit = 0.3,
                   std::size_t steps = 0);

/// Normalized integral of a piecewise-linear curve over [0, limit].
double normalized_integral(std::span<const double> x, std::span<const double> y, double limit);

/// Pixel-level AUROC over aligned maps and masks.
RocCurve pixel_auroc(std::span<const TensorF32> maps, std::span<const GroundTruthMask> masks);

}  // namespace padim
