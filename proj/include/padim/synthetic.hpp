/**
 * @file synthetic.hpp
 * @brief Synthetic activation datasets with planted anomalies.
 *
 * Three fake taps at resolutions G, G/2, G/4 share a latent vector per
 * coarsest cell: tap_l(r, c) = mu_l(r, c) + A_l(r, c) z + noise. Normal
 * activations are therefore Gaussian per position with strong cross-tap
 * correlation.
 *
 *  - mean_shift anomalies add a fixed offset to taps 1 and 2 inside a
 *    rectangle of tap-2 cells;
 *  - correlation anomalies redraw tap 2 from an independent latent inside
 *    the rectangle: every per-tap marginal is unchanged, only the cross-tap
 *    correlation breaks.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "padim/backbone.hpp"
#include "padim/metrics.hpp"

namespace padim {

enum class SyntheticAnomaly { mean_shift, correlation };

struct SyntheticConfig {
  std::size_t input_size = 128;   // pixel resolution of maps and masks
  std::size_t grid = 32;          // finest tap resolution (must be divisible by 4)
  std::vector<std::size_t> channels{16, 24, 32};
  std::size_t latent_dim = 4;
  double noise = 0.3;
  double shift = 1.5;             // per-channel offset for mean_shift, in latent units
  std::size_t n_train = 100;
  std::size_t n_test_normal = 10;
  std::size_t n_test_anomalous = 20;
  SyntheticAnomaly anomaly = SyntheticAnomaly::mean_shift;
  std::uint64_t seed = 7;
};

struct SyntheticSample {
  ActivationSet acts;     // batch of one
  GrayImage mask;         // input_size x input_size, {0, 255}
  bool anomalous = false;
};

struct SyntheticDataset {
  BackboneManifest manifest;
  std::vector<SyntheticSample> train;
  std::vector<SyntheticSample> test;
};

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg);

/// Writes the dataset as an activation-file tree under `class_dir`
/// (manifest.json at its root, see dataset.hpp for the layout).
void write_synthetic_dataset(const SyntheticDataset& ds, const std::filesystem::path& class_dir,
                             const std::string& defect_name = "planted");

}  // namespace padim
