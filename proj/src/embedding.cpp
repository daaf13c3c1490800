#include "padim/embedding.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <numeric>

#include "padim/error.hpp"
#include "padim/random.hpp"

namespace padim {

EmbeddingGrid::EmbeddingGrid(TensorF32 data) : data_(std::move(data)) {
  if (data_.ndim() != 3) throw DataError("embedding grid must be [D, H, W]");
}

EmbeddingGrid::EmbeddingGrid(std::size_t dim, std::size_t height, std::size_t width)
    : data_(Shape{dim, height, width}) {}

std::vector<float> EmbeddingGrid::vector_at(std::size_t p) const {
  std::vector<float> v(dim());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = at(k, p);
  return v;
}

std::vector<EmbeddingGrid> build_embeddings(const ActivationSet& acts) {
  if (acts.taps.empty()) throw DataError("build_embeddings: no taps");
  const std::size_t batch = acts.taps.front().dim(0);
  std::size_t dim = 0;
  for (const auto& t : acts.taps) {
    if (t.ndim() != 4) throw DataError("build_embeddings: activations must be [B, C, H, W]");
    if (t.dim(0) != batch) throw DataError("build_embeddings: inconsistent batch sizes across taps");
    dim += t.dim(1);
  }
  const std::size_t h = acts.taps.front().dim(2);
  const std::size_t w = acts.taps.front().dim(3);

  std::vector<EmbeddingGrid> grids;
  grids.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    EmbeddingGrid grid(dim, h, w);
    float* dst = grid.tensor().data();
    for (const auto& t : acts.taps) {
      const std::size_t c = t.dim(1), hl = t.dim(2), wl = t.dim(3);
      const float* src = t.data() + b * c * hl * wl;
      std::vector<std::size_t> row_map(h), col_map(w);
      for (std::size_t r = 0; r < h; ++r) row_map[r] = r * hl / h;
      for (std::size_t col = 0; col < w; ++col) col_map[col] = col * wl / w;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float* plane = src + ch * hl * wl;
        for (std::size_t r = 0; r < h; ++r) {
          const float* srow = plane + row_map[r] * wl;
          for (std::size_t col = 0; col < w; ++col) *dst++ = srow[col_map[col]];
        }
      }
    }
    grids.push_back(std::move(grid));
  }
  return grids;
}

std::string to_string(ReductionKind kind) {
  switch (kind) {
    case ReductionKind::none: return "none";
    case ReductionKind::random: return "random";
    case ReductionKind::pca: return "pca";
  }
  return "none";
}

ReductionKind reduction_kind_from_string(const std::string& s) {
  if (s == "none") return ReductionKind::none;
  if (s == "random") return ReductionKind::random;
  if (s == "pca") return ReductionKind::pca;
  throw DataError("unknown reduction kind: " + s);
}

void ReductionSpec::validate() const {
  if (full_dim == 0) throw DataError("reduction: full dimension must be >= 1");
  switch (kind) {
    case ReductionKind::none: return;
    case ReductionKind::random:
      if (indices.size() != target_dim || target_dim == 0) throw DataError("reduction: index count != target dim");
      for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= full_dim) throw DataError("reduction: index out of range");
        if (i > 0 && indices[i] <= indices[i - 1]) throw DataError("reduction: indices must be strictly increasing");
      }
      return;
    case ReductionKind::pca:
      if (projection.ndim() != 2 || projection.dim(0) != target_dim || projection.dim(1) != full_dim) {
        throw DataError("reduction: projection must be [target_dim, full_dim]");
      }
      if (mean.size() != full_dim) throw DataError("reduction: pca mean length mismatch");
      return;
  }
}

ReductionSpec make_identity_reduction(std::size_t full_dim) {
  ReductionSpec spec;
  spec.kind = ReductionKind::none;
  spec.full_dim = full_dim;
  spec.target_dim = full_dim;
  return spec;
}

ReductionSpec make_random_reduction(std::size_t full_dim, std::size_t d_prime, std::uint64_t seed) {
  if (d_prime == 0 || d_prime > full_dim) {
    throw ConfigError("random reduction: target dim " + std::to_string(d_prime) + " must be in [1, " +
                      std::to_string(full_dim) + "]");
  }
  // Partial Fisher-Yates: the first d_prime slots are a uniform sample.
  std::vector<std::size_t> pool(full_dim);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < d_prime; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, full_dim - i));
    std::swap(pool[i], pool[j]);
  }
  ReductionSpec spec;
  spec.kind = ReductionKind::random;
  spec.full_dim = full_dim;
  spec.target_dim = d_prime;
  spec.seed = seed;
  spec.indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(d_prime));
  std::sort(spec.indices.begin(), spec.indices.end());
  return spec;
}

PcaAccumulator::PcaAccumulator(std::size_t dim) : dim_(dim), mean_(dim, 0.0), scatter_(dim * dim, 0.0) {
  if (dim == 0) throw DataError("pca: dimension must be >= 1");
}

void PcaAccumulator::add(std::span<const float> vector) {
  if (vector.size() != dim_) throw DataError("pca: dimension mismatch");
  ++count_;
  const double inv_n = 1.0 / static_cast<double>(count_);
  std::vector<double> delta(dim_);
  for (std::size_t i = 0; i < dim_; ++i) {
    delta[i] = vector[i] - mean_[i];
    mean_[i] += delta[i] * inv_n;
  }
  for (std::size_t i = 0; i < dim_; ++i) {
    const double post = vector[i] - mean_[i];
    double* row = &scatter_[i * dim_];
    for (std::size_t j = 0; j <= i; ++j) row[j] += post * delta[j];
  }
}

void PcaAccumulator::add(const EmbeddingGrid& grid) {
  if (grid.dim() != dim_) throw DataError("pca: dimension mismatch");
  // Batched Chan-style merge of this grid's moments into the running ones.
  const auto p = static_cast<Eigen::Index>(grid.positions());
  const auto d = static_cast<Eigen::Index>(dim_);
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(grid.tensor().data(), d, p);
  Eigen::MatrixXd xd = x.cast<double>();
  Eigen::VectorXd batch_mean = xd.rowwise().mean();
  xd.colwise() -= batch_mean;
  Eigen::MatrixXd batch_scatter = Eigen::MatrixXd::Zero(d, d);
  batch_scatter.selfadjointView<Eigen::Lower>().rankUpdate(xd);

  const double n_a = static_cast<double>(count_);
  const double n_b = static_cast<double>(p);
  const double n = n_a + n_b;
  Eigen::Map<Eigen::VectorXd> mean(mean_.data(), d);
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> scatter(scatter_.data(), d, d);
  const Eigen::VectorXd delta = batch_mean - mean;
  scatter.triangularView<Eigen::Lower>() +=
      batch_scatter.triangularView<Eigen::Lower>().toDenseMatrix() + (n_a * n_b / n) * (delta * delta.transpose());
  mean += delta * (n_b / n);
  count_ += grid.positions();
}

ReductionSpec PcaAccumulator::finish(std::size_t d_prime) const {
  if (d_prime == 0 || d_prime > dim_) throw ConfigError("pca: target dim must be in [1, full dim]");
  if (count_ < d_prime || count_ < 2) throw DataError("pca: fewer samples than target dimension");
  const auto d = static_cast<Eigen::Index>(dim_);
  Eigen::MatrixXd cov(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = scatter_[static_cast<std::size_t>(i * d + j)] / static_cast<double>(count_ - 1);
      cov(i, j) = v;
      cov(j, i) = v;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("pca: eigendecomposition failed");
  Eigen::VectorXd eigenvalues = solver.eigenvalues().cwiseMax(1e-12);  // ascending
  const double total = eigenvalues.sum();
  double kept = 0.0;

  ReductionSpec spec;
  spec.kind = ReductionKind::pca;
  spec.full_dim = dim_;
  spec.target_dim = d_prime;
  spec.projection = TensorF32({d_prime, dim_});
  spec.mean = TensorF32({dim_});
  for (std::size_t r = 0; r < d_prime; ++r) {
    const Eigen::Index col = d - 1 - static_cast<Eigen::Index>(r);
    kept += eigenvalues(col);
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    // Sign convention: largest-magnitude coordinate positive.
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    for (std::size_t k = 0; k < dim_; ++k) spec.projection[r * dim_ + k] = static_cast<float>(v(static_cast<Eigen::Index>(k)));
  }
  for (std::size_t k = 0; k < dim_; ++k) spec.mean[k] = static_cast<float>(mean_[k]);
  spec.captured_variance = kept / total;
  return spec;
}

ReductionSpec fit_pca(std::span<const EmbeddingGrid> train, std::size_t d_prime) {
  if (train.empty()) throw DataError("pca: no training embeddings");
  PcaAccumulator acc(train.front().dim());
  for (const auto& g : train) acc.add(g);
  return acc.finish(d_prime);
}

EmbeddingGrid apply_reduction(const EmbeddingGrid& grid, const ReductionSpec& spec) {
  if (spec.kind == ReductionKind::none && (spec.full_dim == 0 || spec.full_dim == grid.dim())) return grid;
  if (grid.dim() != spec.full_dim) {
    throw DataError("dimension mismatch: grid has D=" + std::to_string(grid.dim()) + ", reduction expects " +
                    std::to_string(spec.full_dim));
  }
  const std::size_t p = grid.positions();
  EmbeddingGrid out(spec.target_dim, grid.height(), grid.width());
  if (spec.kind == ReductionKind::random) {
    for (std::size_t k = 0; k < spec.target_dim; ++k) {
      std::copy_n(grid.tensor().data() + spec.indices[k] * p, p, out.tensor().data() + k * p);
    }
    return out;
  }
  using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto d = static_cast<Eigen::Index>(spec.full_dim);
  const auto dp = static_cast<Eigen::Index>(spec.target_dim);
  const auto np = static_cast<Eigen::Index>(p);
  Eigen::Map<const RowMajorF> x(grid.tensor().data(), d, np);
  Eigen::Map<const RowMajorF> proj(spec.projection.data(), dp, d);
  Eigen::Map<const Eigen::VectorXf> mean(spec.mean.data(), d);
  Eigen::Map<RowMajorF> y(out.tensor().data(), dp, np);
  const Eigen::MatrixXf centered = x.colwise() - mean;
  y.noalias() = proj * centered;
  return out;
}

}  // namespace padim
