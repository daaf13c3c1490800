#include "padim/synthetic.hpp"

#include <algorithm>
#include <cstdio>

#include "padim/error.hpp"
#include "padim/random.hpp"

namespace padim {

namespace fs = std::filesystem;

namespace {

// Fixed per-position parameters of the normal class.
struct TapModel {
  std::size_t channels, res;
  std::vector<float> mean;     // res*res x channels
  std::vector<float> loading;  // res*res x channels x latent
};

struct Rect {
  std::size_t r0, c0, r1, c1;  // tap-2 cells, half-open
};

std::string item_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03zu", prefix, i);
  return buf;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.channels.size() != 3) throw ConfigError("synthetic: exactly three taps are generated");
  if (cfg.grid < 8 || cfg.grid % 4 != 0) throw ConfigError("synthetic: grid must be a multiple of 4, >= 8");
  if (cfg.input_size % cfg.grid != 0) throw ConfigError("synthetic: input size must be a multiple of grid");
  const std::size_t k = cfg.latent_dim;
  const std::size_t coarse = cfg.grid / 4;

  Rng param_rng(mix_seed(cfg.seed, 0));
  std::vector<TapModel> taps;
  for (std::size_t l = 0; l < 3; ++l) {
    TapModel t{cfg.channels[l], cfg.grid >> l, {}, {}};
    const std::size_t p = t.res * t.res;
    t.mean.resize(p * t.channels);
    t.loading.resize(p * t.channels * k);
    for (auto& v : t.mean) v = static_cast<float>(standard_normal(param_rng));
    for (auto& v : t.loading) v = static_cast<float>(standard_normal(param_rng) / std::sqrt(static_cast<double>(k)));
    taps.push_back(std::move(t));
  }
  std::vector<float> shift_dir[2];
  for (int l = 0; l < 2; ++l) {
    shift_dir[l].resize(cfg.channels[static_cast<std::size_t>(l)]);
    for (auto& v : shift_dir[l]) v = uniform01(param_rng) < 0.5 ? -1.0f : 1.0f;
  }

  SyntheticDataset ds;
  ds.manifest.name = "synthetic";
  ds.manifest.input_size = cfg.input_size;
  ds.manifest.model_file = "";
  for (std::size_t l = 0; l < 3; ++l) {
    ds.manifest.taps.push_back({"tap" + std::to_string(l + 1), cfg.channels[l], taps[l].res, taps[l].res});
  }

  auto make_sample = [&](Rng& rng, bool anomalous) {
    // Latent per coarsest cell, plus an independent one for broken correlations.
    std::vector<double> z(coarse * coarse * k), z_alt(coarse * coarse * k);
    for (auto& v : z) v = standard_normal(rng);
    for (auto& v : z_alt) v = standard_normal(rng);

    Rect rect{0, 0, 0, 0};
    const std::size_t mid = cfg.grid / 2;  // tap-2 resolution
    if (anomalous) {
      const std::size_t h = 3 + uniform_index(rng, std::max<std::size_t>(mid / 4, 1));
      const std::size_t w = 3 + uniform_index(rng, std::max<std::size_t>(mid / 4, 1));
      rect.r0 = uniform_index(rng, mid - h + 1);
      rect.c0 = uniform_index(rng, mid - w + 1);
      rect.r1 = rect.r0 + h;
      rect.c1 = rect.c0 + w;
    }
    auto inside_mid = [&](std::size_t r2, std::size_t c2) {
      return anomalous && r2 >= rect.r0 && r2 < rect.r1 && c2 >= rect.c0 && c2 < rect.c1;
    };

    SyntheticSample s;
    s.anomalous = anomalous;
    for (std::size_t l = 0; l < 3; ++l) {
      const auto& t = taps[l];
      TensorF32 act({1, t.channels, t.res, t.res});
      const std::size_t scale_to_coarse = t.res / coarse;
      const std::size_t scale_to_mid = t.res >= mid ? t.res / mid : 0;
      for (std::size_t r = 0; r < t.res; ++r) {
        for (std::size_t c = 0; c < t.res; ++c) {
          const std::size_t p = r * t.res + c;
          const std::size_t cell = (r / scale_to_coarse) * coarse + (c / scale_to_coarse);
          const bool hit = scale_to_mid && inside_mid(r / scale_to_mid, c / scale_to_mid);
          const bool redraw = hit && l == 1 && cfg.anomaly == SyntheticAnomaly::correlation;
          const double* zc = (redraw ? z_alt.data() : z.data()) + cell * k;
          for (std::size_t ch = 0; ch < t.channels; ++ch) {
            double v = t.mean[p * t.channels + ch];
            const float* a = &t.loading[(p * t.channels + ch) * k];
            for (std::size_t j = 0; j < k; ++j) v += a[j] * zc[j];
            v += cfg.noise * standard_normal(rng);
            if (hit && l < 2 && cfg.anomaly == SyntheticAnomaly::mean_shift) v += cfg.shift * shift_dir[l][ch];
            act[(ch * t.res + r) * t.res + c] = static_cast<float>(v);
          }
        }
      }
      s.acts.taps.push_back(std::move(act));
    }
    s.mask = GrayImage(cfg.input_size, cfg.input_size, 0);
    if (anomalous) {
      const std::size_t px = cfg.input_size / mid;
      for (std::size_t y = rect.r0 * px; y < rect.r1 * px; ++y) {
        for (std::size_t x = rect.c0 * px; x < rect.c1 * px; ++x) s.mask.at(x, y) = 255;
      }
    }
    return s;
  };

  std::uint64_t stream = 1;
  for (std::size_t i = 0; i < cfg.n_train; ++i) {
    Rng rng(mix_seed(cfg.seed, stream++));
    ds.train.push_back(make_sample(rng, false));
  }
  for (std::size_t i = 0; i < cfg.n_test_normal; ++i) {
    Rng rng(mix_seed(cfg.seed, stream++));
    ds.test.push_back(make_sample(rng, false));
  }
  for (std::size_t i = 0; i < cfg.n_test_anomalous; ++i) {
    Rng rng(mix_seed(cfg.seed, stream++));
    ds.test.push_back(make_sample(rng, true));
  }
  return ds;
}

void write_synthetic_dataset(const SyntheticDataset& ds, const fs::path& class_dir, const std::string& defect_name) {
  fs::create_directories(class_dir);
  write_manifest(ds.manifest, class_dir / "manifest.json");
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    write_activation_files(ds.train[i].acts, class_dir / "train" / "good" / item_name("train_", i), ds.manifest);
  }
  std::size_t n_good = 0, n_bad = 0;
  for (const auto& s : ds.test) {
    if (!s.anomalous) {
      write_activation_files(s.acts, class_dir / "test" / "good" / item_name("good_", n_good++), ds.manifest);
      continue;
    }
    const auto name = item_name("defect_", n_bad++);
    write_activation_files(s.acts, class_dir / "test" / defect_name / name, ds.manifest);
    fs::create_directories(class_dir / "ground_truth" / defect_name);
    write_png(s.mask, class_dir / "ground_truth" / defect_name / (name + "_mask.png"));
  }
}

}  // namespace padim
