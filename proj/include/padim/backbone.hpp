/**
 * @file backbone.hpp
 * @brief Pretrained CNN packages and intermediate-layer activations.
 *
 * A package is a directory holding `model.onnx` and `manifest.json`:
 *
 *     {
 *       "name": "resnet18",
 *       "input_size": 224,
 *       "input_name": "input",
 *       "model": "model.onnx",
 *       "mean": [0.485, 0.456, 0.406],
 *       "std":  [0.229, 0.224, 0.225],
 *       "taps": [ {"name": "layer1", "shape": [64, 56, 56]}, ... ]
 *     }
 *
 * Tap names are graph value names. Taps are ordered by decreasing spatial
 * resolution. A loaded package is immutable; `extract` is const and keeps
 * all scratch state local, so concurrent calls are safe.
 */
#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "padim/tensor.hpp"

namespace padim {

namespace onnx {
class Program;
}

struct TapPoint {
  std::string name;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  bool operator==(const TapPoint&) const = default;
};

struct BackboneManifest {
  std::string name;
  std::size_t input_size = 224;
  std::string input_name = "input";
  std::string model_file = "model.onnx";
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> std{0.229f, 0.224f, 0.225f};
  std::vector<TapPoint> taps;

  std::size_t total_channels() const;
  /// Throws DataError when taps are empty, degenerate or not ordered by
  /// decreasing resolution.
  void validate() const;
  std::string to_json() const;
};

BackboneManifest parse_manifest(std::string_view json_text);
BackboneManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const BackboneManifest& m, const std::filesystem::path& path);

/// Shipped manifests: "r18" (ResNet18) and "wr50" (WideResNet-50-2), taps
/// after layers 1-3 at input 224. Throws ConfigError for other names.
BackboneManifest builtin_manifest(std::string_view name);

/// Per-tap activations for a batch: tensor l has shape [B, C_l, H_l, W_l].
struct ActivationSet {
  std::vector<TensorF32> taps;

  std::size_t batch() const;
  /// Throws DataError when tap shapes disagree with the manifest or batch sizes differ.
  void check_against(const BackboneManifest& m) const;
  /// Slice out image `b` as a batch of one.
  ActivationSet image(std::size_t b) const;
};

class BackbonePackage {
 public:
  /// Loads `dir/manifest.json` and the model it names; probes every tap with
  /// a zero input and checks the declared shapes.
  static BackbonePackage load(const std::filesystem::path& dir);
  /// Same, with an in-memory manifest and model file.
  static BackbonePackage from_parts(BackboneManifest manifest, const std::filesystem::path& model_path);

  const BackboneManifest& manifest() const { return manifest_; }

  /// batch: [B, 3, S, S] with S == manifest().input_size.
  ActivationSet extract(const TensorF32& batch) const;

 private:
  BackboneManifest manifest_;
  std::shared_ptr<const onnx::Program> program_;
};

inline BackbonePackage load_backbone(const std::filesystem::path& dir) { return BackbonePackage::load(dir); }

/// Activation-file mode: reads `<dir>/<tap>.pft` for every manifest tap.
/// Files hold [C,H,W] or [1,C,H,W]. Returns a batch of one.
ActivationSet read_activation_files(const std::filesystem::path& dir, const BackboneManifest& m);
void write_activation_files(const ActivationSet& acts, const std::filesystem::path& dir, const BackboneManifest& m);

/// Stack single-image sets into one batch.
ActivationSet concat_batches(const std::vector<ActivationSet>& parts);

}  // namespace padim
