/**
 * @file gaussian.hpp
 * @brief Per-position multivariate Gaussians and Mahalanobis scoring.
 *
 * For every grid position the model keeps the sample mean and the lower
 * Cholesky factor of
 *
 *     Sigma = 1/(N-1) * sum_k (x_k - mu)(x_k - mu)^T + eps * I.
 *
 * Moments are accumulated in double with Welford updates, so fitting holds
 * O(H * W * D^2) state regardless of N. Parameters are stored as float32.
 */
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "padim/backbone.hpp"
#include "padim/embedding.hpp"
#include "padim/image.hpp"
#include "padim/tensor.hpp"

namespace padim {

inline constexpr double kDefaultEpsilon = 0.01;

struct PadimModel {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t dim = 0;
  TensorF32 mean;        // [H, W, D]
  TensorF32 cov_factor;  // [H, W, D, D], lower triangular, zeros above the diagonal
  double epsilon = kDefaultEpsilon;
  std::uint64_t n_train = 0;

  // Provenance needed to score new images the same way.
  ReductionSpec reduction;
  PreprocessConfig preprocess;
  std::string backbone_id;
  BackboneManifest backbone;        // taps available from the feature source
  std::vector<std::size_t> taps_used;  // indices into backbone.taps, in embedding order

  std::size_t positions() const { return height * width; }
  const float* mean_at(std::size_t p) const { return mean.data() + p * dim; }
  const float* factor_at(std::size_t p) const { return cov_factor.data() + p * dim * dim; }
};

/// Mahalanobis distances M(x_ij) on the model grid, shape [H, W].
using DistanceMap = TensorF32;

struct FitReport {
  /// Positions whose factorization needed eps * 10^k, k >= 1.
  std::size_t regularization_retries = 0;
  double max_epsilon_used = 0.0;
};

class GaussianEstimator {
 public:
  GaussianEstimator(std::size_t height, std::size_t width, std::size_t dim);

  /// Throws DataError on a grid of a different shape.
  void add(const EmbeddingGrid& grid);

  std::size_t count() const { return count_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t dim() const { return dim_; }

  std::vector<double> mean(std::size_t p) const;
  /// Row-major D x D regularized covariance at position p (double precision).
  std::vector<double> covariance(std::size_t p, double epsilon) const;

  /// Factorizes every position. Throws DataError when count() < 2 and
  /// ConfigError when epsilon <= 0.
  PadimModel finish(double epsilon, FitReport* report = nullptr) const;

 private:
  std::size_t height_, width_, dim_;
  std::size_t count_ = 0;
  std::vector<double> mean_;     // P x D
  std::vector<double> scatter_;  // P x D(D+1)/2, packed lower triangle
};

PadimModel fit(std::span<const EmbeddingGrid> train, double epsilon = kDefaultEpsilon, FitReport* report = nullptr);

/// In-place lower Cholesky of a row-major n x n SPD matrix. Returns false
/// when a non-positive pivot is met.
bool cholesky_lower(std::span<double> a, std::size_t n);

/// sqrt((x - mu)^T Sigma^-1 (x - mu)) at every position via forward
/// substitution against the stored factor.
DistanceMap mahalanobis_map(const PadimModel& model, const EmbeddingGrid& grid);

/// Distance of one vector against position p of the model.
double mahalanobis(const PadimModel& model, std::size_t p, std::span<const float> x);

/// One model per tap, each on the tap's own grid (layer ablation).
std::vector<PadimModel> fit_per_layer(std::span<const ActivationSet> train, double epsilon = kDefaultEpsilon);

/// Elementwise sum of equally shaped maps.
DistanceMap ensemble_sum(std::span<const DistanceMap> maps);

}  // namespace padim
