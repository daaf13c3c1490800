/**
 * @file embedding.hpp
 * @brief Patch embeddings and their dimensionality reduction.
 */
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "padim/backbone.hpp"
#include "padim/tensor.hpp"

namespace padim {

/// D-dimensional embedding at every cell of an H x W grid, stored [D, H, W].
class EmbeddingGrid {
 public:
  EmbeddingGrid() = default;
  explicit EmbeddingGrid(TensorF32 data);
  EmbeddingGrid(std::size_t dim, std::size_t height, std::size_t width);

  std::size_t dim() const { return data_.dim(0); }
  std::size_t height() const { return data_.dim(1); }
  std::size_t width() const { return data_.dim(2); }
  std::size_t positions() const { return height() * width(); }

  /// Coordinate k of the vector at flat position p = row * width + col.
  float at(std::size_t k, std::size_t p) const { return data_[k * positions() + p]; }
  float& at(std::size_t k, std::size_t p) { return data_[k * positions() + p]; }

  /// Copy of the vector at flat position p.
  std::vector<float> vector_at(std::size_t p) const;

  const TensorF32& tensor() const { return data_; }
  TensorF32& tensor() { return data_; }

  bool operator==(const EmbeddingGrid& other) const { return data_ == other.data_; }

 private:
  TensorF32 data_;
};

/// Concatenate tap activations per position on the grid of the first
/// (largest) tap. Coarser taps are replicated by nearest index:
/// (floor(r * H_l / H), floor(c * W_l / W)). Returns one grid per image.
std::vector<EmbeddingGrid> build_embeddings(const ActivationSet& acts);

enum class ReductionKind { none, random, pca };

std::string to_string(ReductionKind kind);
ReductionKind reduction_kind_from_string(const std::string& s);

struct ReductionSpec {
  ReductionKind kind = ReductionKind::none;
  std::size_t full_dim = 0;
  std::size_t target_dim = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> indices;  // random: sorted, unique
  TensorF32 projection;              // pca: [target_dim, full_dim], orthonormal rows
  TensorF32 mean;                    // pca: [full_dim]
  double captured_variance = 1.0;    // pca: fraction of total variance kept

  /// Output dimension after apply_reduction.
  std::size_t output_dim() const { return kind == ReductionKind::none ? full_dim : target_dim; }
  /// Throws DataError on violated invariants.
  void validate() const;
};

ReductionSpec make_identity_reduction(std::size_t full_dim);

/// Uniform sample of d_prime coordinates without replacement, ascending.
/// Deterministic per seed. Throws ConfigError when d_prime is 0 or > full_dim.
ReductionSpec make_random_reduction(std::size_t full_dim, std::size_t d_prime, std::uint64_t seed);

/// Streaming accumulator for the pooled (all positions, all images) sample
/// covariance used by PCA.
class PcaAccumulator {
 public:
  explicit PcaAccumulator(std::size_t dim);
  void add(std::span<const float> vector);
  void add(const EmbeddingGrid& grid);
  std::size_t count() const { return count_; }
  /// Top-d_prime eigenvectors of the sample covariance. Eigenvalues are
  /// clamped at 1e-12. Throws DataError when count() < d_prime.
  ReductionSpec finish(std::size_t d_prime) const;

 private:
  std::size_t dim_;
  std::size_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> scatter_;  // dim x dim, lower triangle maintained
};

ReductionSpec fit_pca(std::span<const EmbeddingGrid> train, std::size_t d_prime);

/// Gather (random) or center-and-project (pca). Throws DataError when the
/// grid dimension does not match the reduction's full_dim.
EmbeddingGrid apply_reduction(const EmbeddingGrid& grid, const ReductionSpec& spec);

}  // namespace padim
