#include "padim/gaussian.hpp"

#include <algorithm>
#include <cmath>

#include "padim/error.hpp"

namespace padim {

namespace {

std::size_t packed_size(std::size_t d) { return d * (d + 1) / 2; }

// Offset of row i in the packed lower triangle.
std::size_t packed_row(std::size_t i) { return i * (i + 1) / 2; }

constexpr int kMaxRegularizationRetries = 8;

}  // namespace

GaussianEstimator::GaussianEstimator(std::size_t height, std::size_t width, std::size_t dim)
    : height_(height), width_(width), dim_(dim) {
  if (height == 0 || width == 0 || dim == 0) throw DataError("gaussian: grid and dimension must be non-empty");
  mean_.assign(height * width * dim, 0.0);
  scatter_.assign(height * width * packed_size(dim), 0.0);
}

void GaussianEstimator::add(const EmbeddingGrid& grid) {
  if (grid.height() != height_ || grid.width() != width_ || grid.dim() != dim_) {
    throw DataError("dimension mismatch: training grid does not match the first grid's shape");
  }
  ++count_;
  const double inv_n = 1.0 / static_cast<double>(count_);
  const std::size_t positions = height_ * width_;
  const std::size_t tri = packed_size(dim_);
  const float* x = grid.tensor().data();

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t sp = 0; sp < static_cast<std::ptrdiff_t>(positions); ++sp) {
    const auto p = static_cast<std::size_t>(sp);
    std::vector<double> delta(dim_), post(dim_);
    double* mu = &mean_[p * dim_];
    for (std::size_t k = 0; k < dim_; ++k) {
      const double v = x[k * positions + p];
      delta[k] = v - mu[k];
      mu[k] += delta[k] * inv_n;
      post[k] = v - mu[k];
    }
    double* s = &scatter_[p * tri];
    for (std::size_t i = 0; i < dim_; ++i) {
      double* row = s + packed_row(i);
      const double pi = post[i];
      for (std::size_t j = 0; j <= i; ++j) row[j] += pi * delta[j];
    }
  }
}

std::vector<double> GaussianEstimator::mean(std::size_t p) const {
  return {mean_.begin() + static_cast<std::ptrdiff_t>(p * dim_),
          mean_.begin() + static_cast<std::ptrdiff_t>((p + 1) * dim_)};
}

std::vector<double> GaussianEstimator::covariance(std::size_t p, double epsilon) const {
  if (count_ < 2) throw DataError("gaussian fit needs N >= 2 training images");
  const double norm = 1.0 / static_cast<double>(count_ - 1);
  const double* s = &scatter_[p * packed_size(dim_)];
  std::vector<double> cov(dim_ * dim_);
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = s[packed_row(i) + j] * norm;
      cov[i * dim_ + j] = v;
      cov[j * dim_ + i] = v;
    }
    cov[i * dim_ + i] += epsilon;
  }
  return cov;
}

bool cholesky_lower(std::span<double> a, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) diag -= a[j * n + k] * a[j * n + k];
    if (!(diag > 0.0) || !std::isfinite(diag)) return false;
    const double ljj = std::sqrt(diag);
    a[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) v -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = v / ljj;
    }
    for (std::size_t k = j + 1; k < n; ++k) a[j * n + k] = 0.0;
  }
  return true;
}

PadimModel GaussianEstimator::finish(double epsilon, FitReport* report) const {
  if (count_ < 2) throw DataError("gaussian fit needs N >= 2 training images, got " + std::to_string(count_));
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be > 0");
  PadimModel model;
  model.height = height_;
  model.width = width_;
  model.dim = dim_;
  model.epsilon = epsilon;
  model.n_train = count_;
  model.reduction = make_identity_reduction(dim_);
  const std::size_t positions = height_ * width_;
  model.mean = TensorF32({height_, width_, dim_});
  model.cov_factor = TensorF32({height_, width_, dim_, dim_});
  for (std::size_t i = 0; i < mean_.size(); ++i) model.mean[i] = static_cast<float>(mean_[i]);

  std::size_t retries = 0;
  double max_eps = epsilon;
  bool failed = false;
#pragma omp parallel for schedule(dynamic, 16) reduction(+ : retries) reduction(max : max_eps)
  for (std::ptrdiff_t sp = 0; sp < static_cast<std::ptrdiff_t>(positions); ++sp) {
    const auto p = static_cast<std::size_t>(sp);
    double eps = epsilon;
    std::vector<double> a;
    bool ok = false;
    for (int attempt = 0; attempt <= kMaxRegularizationRetries; ++attempt) {
      a = covariance(p, eps);
      if (cholesky_lower(a, dim_)) {
        ok = true;
        break;
      }
      eps *= 10.0;
      ++retries;
    }
    if (!ok) {
#pragma omp atomic write
      failed = true;
      continue;
    }
    max_eps = std::max(max_eps, eps);
    float* dst = model.cov_factor.data() + p * dim_ * dim_;
    for (std::size_t i = 0; i < dim_ * dim_; ++i) dst[i] = static_cast<float>(a[i]);
  }
  if (failed) throw NumericError("cholesky failed even after regularization retries");
  if (report) {
    report->regularization_retries = retries;
    report->max_epsilon_used = max_eps;
  }
  return model;
}

PadimModel fit(std::span<const EmbeddingGrid> train, double epsilon, FitReport* report) {
  if (train.size() < 2) throw DataError("gaussian fit needs N >= 2 training images, got " + std::to_string(train.size()));
  GaussianEstimator est(train.front().height(), train.front().width(), train.front().dim());
  for (const auto& g : train) est.add(g);
  return est.finish(epsilon, report);
}

double mahalanobis(const PadimModel& model, std::size_t p, std::span<const float> x) {
  const std::size_t d = model.dim;
  if (x.size() != d) throw DataError("dimension mismatch in mahalanobis");
  const float* mu = model.mean_at(p);
  const float* l = model.factor_at(p);
  std::vector<double> y(d);
  double sq = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double v = static_cast<double>(x[i]) - mu[i];
    const float* row = l + i * d;
    for (std::size_t k = 0; k < i; ++k) v -= row[k] * y[k];
    y[i] = v / row[i];
    sq += y[i] * y[i];
  }
  return std::sqrt(sq);
}

DistanceMap mahalanobis_map(const PadimModel& model, const EmbeddingGrid& grid) {
  if (grid.height() != model.height || grid.width() != model.width || grid.dim() != model.dim) {
    throw DataError("dimension mismatch: grid [" + std::to_string(grid.dim()) + "," + std::to_string(grid.height()) +
                    "," + std::to_string(grid.width()) + "] vs model [" + std::to_string(model.dim) + "," +
                    std::to_string(model.height) + "," + std::to_string(model.width) + "]");
  }
  const std::size_t positions = model.positions();
  const std::size_t d = model.dim;
  DistanceMap out({model.height, model.width});
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t sp = 0; sp < static_cast<std::ptrdiff_t>(positions); ++sp) {
    const auto p = static_cast<std::size_t>(sp);
    std::vector<float> x(d);
    for (std::size_t k = 0; k < d; ++k) x[k] = grid.at(k, p);
    out[p] = static_cast<float>(mahalanobis(model, p, x));
  }
  return out;
}

std::vector<PadimModel> fit_per_layer(std::span<const ActivationSet> train, double epsilon) {
  if (train.empty() || train.front().taps.empty()) throw DataError("fit_per_layer: empty tap list");
  const std::size_t ntaps = train.front().taps.size();
  std::vector<PadimModel> models;
  for (std::size_t l = 0; l < ntaps; ++l) {
    std::vector<EmbeddingGrid> grids;
    for (const auto& acts : train) {
      if (acts.taps.size() != ntaps) throw DataError("fit_per_layer: inconsistent tap counts");
      ActivationSet single;
      single.taps.push_back(acts.taps[l]);
      for (auto& g : build_embeddings(single)) grids.push_back(std::move(g));
    }
    models.push_back(fit(grids, epsilon));
  }
  return models;
}

DistanceMap ensemble_sum(std::span<const DistanceMap> maps) {
  if (maps.empty()) throw DataError("ensemble_sum: no maps");
  DistanceMap out = maps.front();
  for (std::size_t i = 1; i < maps.size(); ++i) {
    if (maps[i].shape() != out.shape()) throw DataError("ensemble_sum: shape mismatch");
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += maps[i][k];
  }
  return out;
}

}  // namespace padim
