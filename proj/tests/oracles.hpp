// Independent reference implementations used to check the library.
// Deliberately naive: dense loops, no shared code with src/.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline std::vector<double> mean(const Matrix& samples) {
  std::vector<double> m(samples.front().size(), 0.0);
  for (const auto& s : samples)
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += s[i];
  for (auto& v : m) v /= static_cast<double>(samples.size());
  return m;
}

// 1/(N-1) sum (x-mu)(x-mu)^T + eps I, two explicit loops.
inline Matrix covariance(const Matrix& samples, double eps) {
  const auto mu = mean(samples);
  const std::size_t d = mu.size();
  Matrix c(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (const auto& x : samples) s += (x[i] - mu[i]) * (x[j] - mu[j]);
      c[i][j] = s / static_cast<double>(samples.size() - 1) + (i == j ? eps : 0.0);
    }
  }
  return c;
}

// Gauss-Jordan with partial pivoting in long double.
inline Matrix inverse(const Matrix& a) {
  const std::size_t n = a.size();
  std::vector<std::vector<long double>> m(n, std::vector<long double>(2 * n, 0.0L));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) m[i][j] = a[i][j];
    m[i][n + i] = 1.0L;
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(m[r][c]) > std::fabs(m[p][c])) p = r;
    std::swap(m[c], m[p]);
    if (m[c][c] == 0.0L) throw std::runtime_error("singular");
    const long double inv = 1.0L / m[c][c];
    for (auto& v : m[c]) v *= inv;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const long double f = m[r][c];
      for (std::size_t k = 0; k < 2 * n; ++k) m[r][k] -= f * m[c][k];
    }
  }
  Matrix out(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i][j] = static_cast<double>(m[i][n + j]);
  return out;
}

// (x-mu)^T S^-1 (x-mu) with an explicit inverse.
inline double squared_mahalanobis(const Matrix& cov, const std::vector<double>& mu, const std::vector<double>& x) {
  const auto inv = inverse(cov);
  long double s = 0.0L;
  for (std::size_t i = 0; i < mu.size(); ++i)
    for (std::size_t j = 0; j < mu.size(); ++j) s += (x[i] - mu[i]) * inv[i][j] * (x[j] - mu[j]);
  return static_cast<double>(s);
}

// Pairwise Mann-Whitney: (#pos>neg + 0.5 #ties) / (P N).
inline double mann_whitney(const std::vector<float>& scores, const std::vector<std::uint8_t>& labels) {
  std::uint64_t twice = 0, p = 0, n = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i]) ++p;
    else ++n;
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) twice += 2;
      else if (scores[i] == scores[j]) twice += 1;
    }
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(p) * static_cast<double>(n));
}

// 8-connected component labels by repeated relaxation (slow but obviously correct).
inline std::vector<int> components(std::size_t h, std::size_t w, const std::vector<std::uint8_t>& bin, int& count) {
  std::vector<int> lab(h * w, 0);
  int next = 0;
  for (std::size_t i = 0; i < h * w; ++i)
    if (bin[i]) lab[i] = ++next;
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        if (!lab[y * w + x]) continue;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
            const int o = lab[yy * w + xx];
            if (o && o < lab[y * w + x]) {
              lab[y * w + x] = o;
              changed = true;
            }
          }
        }
      }
    }
  }
  std::set<int> ids(lab.begin(), lab.end());
  ids.erase(0);
  std::vector<int> remap(next + 1, 0);
  int k = 0;
  for (int id : ids) remap[id] = ++k;
  for (auto& l : lab) l = remap[l];
  count = k;
  return lab;
}

struct ProInput {
  std::size_t h = 0, w = 0;
  std::vector<std::vector<float>> maps;
  std::vector<std::vector<std::uint8_t>> masks;  // 0/1
};

// Recomputes every (FPR, mean overlap) point from scratch for each distinct threshold.
inline double pro(const ProInput& in, double limit) {
  std::vector<std::vector<int>> labels;
  std::vector<int> counts;
  for (const auto& m : in.masks) {
    int c = 0;
    labels.push_back(components(in.h, in.w, m, c));
    counts.push_back(c);
  }
  std::set<float, std::greater<float>> thresholds;
  for (const auto& m : in.maps) thresholds.insert(m.begin(), m.end());

  std::vector<double> xs{0.0}, ys;
  for (float t : thresholds) {
    double normals = 0, fp = 0, overlap_sum = 0;
    int regions = 0;
    for (std::size_t k = 0; k < in.maps.size(); ++k) {
      for (int r = 1; r <= counts[k]; ++r) {
        double size = 0, hit = 0;
        for (std::size_t i = 0; i < in.h * in.w; ++i) {
          if (labels[k][i] != r) continue;
          ++size;
          if (in.maps[k][i] >= t) ++hit;
        }
        overlap_sum += hit / size;
        ++regions;
      }
      for (std::size_t i = 0; i < in.h * in.w; ++i) {
        if (labels[k][i]) continue;
        ++normals;
        if (in.maps[k][i] >= t) ++fp;
      }
    }
    xs.push_back(fp / normals);
    ys.push_back(overlap_sum / regions);
  }
  ys.insert(ys.begin(), ys.front());

  double area = 0.0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i - 1] >= limit) break;
    if (xs[i] <= limit) {
      area += (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]) / 2.0;
    } else {
      const double yl = ys[i - 1] + (ys[i] - ys[i - 1]) * (limit - xs[i - 1]) / (xs[i] - xs[i - 1]);
      area += (limit - xs[i - 1]) * (yl + ys[i - 1]) / 2.0;
      break;
    }
  }
  return area / limit;
}

inline double catmull_rom(double x) {
  x = std::fabs(x);
  if (x < 1) return 1.5 * x * x * x - 2.5 * x * x + 1;
  if (x < 2) return -0.5 * x * x * x + 2.5 * x * x - 4 * x + 2;
  return 0;
}

// Direct 2-D bicubic upsampling, pixel-center aligned, weights renormalized over in-range taps.
inline std::vector<double> bicubic_up(const std::vector<double>& in, std::size_t ih, std::size_t iw, std::size_t oh,
                                      std::size_t ow) {
  auto weights = [](std::size_t n_in, std::size_t n_out, std::size_t o) {
    const double center = (o + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out);
    std::vector<double> w(n_in);
    double s = 0;
    for (std::size_t i = 0; i < n_in; ++i) s += (w[i] = catmull_rom(i + 0.5 - center));
    for (auto& v : w) v /= s;
    return w;
  };
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    const auto wy = weights(ih, oh, y);
    for (std::size_t x = 0; x < ow; ++x) {
      const auto wx = weights(iw, ow, x);
      double acc = 0;
      for (std::size_t r = 0; r < ih; ++r)
        for (std::size_t c = 0; c < iw; ++c) acc += wy[r] * wx[c] * in[r * iw + c];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

// Dense 2-D Gaussian convolution with half-sample symmetric padding.
inline std::vector<double> dense_blur(const std::vector<double>& in, std::size_t h, std::size_t w, double sigma) {
  const long r = static_cast<long>(std::ceil(4.0 * sigma));
  auto reflect = [](long i, long n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  double norm = 0;
  for (long dy = -r; dy <= r; ++dy)
    for (long dx = -r; dx <= r; ++dx) norm += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
  std::vector<double> out(h * w, 0.0);
  for (long y = 0; y < static_cast<long>(h); ++y) {
    for (long x = 0; x < static_cast<long>(w); ++x) {
      double acc = 0;
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx)
          acc += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) *
                 in[reflect(y + dy, h) * w + reflect(x + dx, w)];
      out[y * w + x] = acc / norm;
    }
  }
  return out;
}

}  // namespace oracle
