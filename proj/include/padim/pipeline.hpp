/**
 * @file pipeline.hpp
 * @brief End-to-end orchestration: fit, score, evaluate, ablate, benchmark.
 *
 * Features come from a FeatureSource: either a backbone package run on PNG
 * images, or precomputed activation files (no neural runtime involved).
 */
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "padim/anomalymap.hpp"
#include "padim/backbone.hpp"
#include "padim/dataset.hpp"
#include "padim/gaussian.hpp"
#include "padim/metrics.hpp"

namespace padim {

struct RunConfig {
  std::string backbone;                           // r18 | wr50 | package directory
  std::optional<std::filesystem::path> activations;  // manifest.json of an activation-file tree
  std::filesystem::path backbone_root = "backbones";  // where r18/ and wr50/ packages live
  ReductionKind reduction = ReductionKind::none;
  std::size_t reduced_dim = 0;
  std::uint64_t seed = 0;
  double epsilon = kDefaultEpsilon;
  PreprocessConfig preprocess;
  double sigma = kDefaultSigma;

  /// Throws ConfigError unless exactly one feature source is set and the
  /// numeric options are in range.
  void validate() const;
};

class FeatureSource {
 public:
  virtual ~FeatureSource() = default;
  virtual const BackboneManifest& manifest() const = 0;
  virtual const PreprocessConfig& preprocess() const = 0;
  virtual std::string id() const = 0;
  /// Activations for one dataset item (batch of one).
  virtual ActivationSet features(const std::filesystem::path& item) const = 0;
  /// Ground truth aligned with the anomaly maps (map_size x map_size).
  virtual GroundTruthMask mask(const std::optional<std::filesystem::path>& path) const = 0;
  /// Side of the anomaly maps (the backbone input size).
  std::size_t map_size() const { return manifest().input_size; }
};

class BackboneSource final : public FeatureSource {
 public:
  BackboneSource(BackbonePackage pkg, PreprocessConfig cfg, std::string id);
  const BackboneManifest& manifest() const override { return pkg_.manifest(); }
  const PreprocessConfig& preprocess() const override { return cfg_; }
  std::string id() const override { return id_; }
  ActivationSet features(const std::filesystem::path& item) const override;
  GroundTruthMask mask(const std::optional<std::filesystem::path>& path) const override;

 private:
  BackbonePackage pkg_;
  PreprocessConfig cfg_;
  std::string id_;
};

class ActivationFileSource final : public FeatureSource {
 public:
  explicit ActivationFileSource(BackboneManifest manifest);
  const BackboneManifest& manifest() const override { return manifest_; }
  const PreprocessConfig& preprocess() const override { return cfg_; }
  std::string id() const override { return "activations:" + manifest_.name; }
  ActivationSet features(const std::filesystem::path& item) const override;
  GroundTruthMask mask(const std::optional<std::filesystem::path>& path) const override;

 private:
  BackboneManifest manifest_;
  PreprocessConfig cfg_;
};

std::unique_ptr<FeatureSource> make_source(const RunConfig& cfg);

/// The source a model was fit with: its activation layout, or its backbone
/// package and preprocessing.
std::unique_ptr<FeatureSource> source_for_model(const PadimModel& model,
                                                const std::filesystem::path& backbone_root = "backbones");

/// Build the (optionally reduced) embedding grid for one image.
EmbeddingGrid embed(const ActivationSet& acts, const std::vector<std::size_t>& taps_used, const ReductionSpec& reduction);

struct FitStats {
  double seconds = 0.0;
  long peak_rss_kb = 0;
  FitReport numeric;
};

/// Streams the training items through the source (two passes for PCA) and fits.
/// taps_used empty = all taps.
PadimModel fit_model(const FeatureSource& source, const std::vector<std::filesystem::path>& train,
                     const RunConfig& cfg, std::vector<std::size_t> taps_used = {}, FitStats* stats = nullptr);

/// Same, from activations already in memory.
PadimModel fit_model(const std::vector<ActivationSet>& train, const BackboneManifest& manifest, const RunConfig& cfg,
                     std::vector<std::size_t> taps_used = {});

struct ScoredImage {
  DistanceMap distances;
  AnomalyMap anomaly;
};

ScoredImage score_activations(const PadimModel& model, const ActivationSet& acts, std::size_t map_size, double sigma);
ScoredImage score_item(const PadimModel& model, const FeatureSource& source, const std::filesystem::path& item,
                       double sigma);

struct EvalResult {
  std::string class_name;
  RocCurve pixel_roc;
  RocCurve image_roc;
  ProCurve pro;
  std::size_t n_test = 0;
  std::size_t n_anomalous = 0;
};

/// Metrics from maps already computed; masks for normal images may be empty.
EvalResult evaluate_maps(const std::vector<AnomalyMap>& maps, const std::vector<GroundTruthMask>& masks,
                         const std::vector<std::uint8_t>& labels, std::string class_name = {});
EvalResult evaluate(const PadimModel& model, const FeatureSource& source, const DatasetIndex& index, double sigma);

/// JSON report; metrics in percent. With include_curves, ROC/PRO curves are inlined.
std::string eval_report_json(const std::vector<EvalResult>& results, bool include_curves = false);

struct AblationRow {
  std::string name;
  double pixel_auroc = 0.0;  // fraction
  double pro = 0.0;
  double image_auroc = 0.0;
  double pixel_auroc_sem = 0.0;  // seed-averaged rows only
  double pro_sem = 0.0;
  std::size_t runs = 1;
};

struct AblationOptions {
  std::size_t reduced_dim = 0;  // 0 = D/4, rounded down, at least 1
  std::size_t rd_seeds = 10;
  bool include_pca = true;
};

/// Layer 1..L, Layer sum, full model, Rd (seed-averaged) and PCA rows.
std::vector<AblationRow> run_ablation(const std::vector<ActivationSet>& train, const std::vector<ActivationSet>& test,
                                      const std::vector<GroundTruthMask>& masks, const std::vector<std::uint8_t>& labels,
                                      const BackboneManifest& manifest, const RunConfig& cfg,
                                      const AblationOptions& options);
std::string ablation_markdown(const std::vector<AblationRow>& rows);
std::string ablation_json(const std::vector<AblationRow>& rows);

struct BenchEntry {
  std::string model_path;
  std::uint64_t n_train = 0;
  std::uintmax_t model_bytes = 0;
  double extract_seconds = 0.0;  // mean per image
  double score_seconds = 0.0;    // mean per image (embedding + distances + postprocess)
  double score_median_seconds = 0.0;  // median over repetitions of the per-image mean
};

/// Throws ConfigError when repetitions == 0 or no images are given.
std::vector<BenchEntry> benchmark(const std::vector<std::filesystem::path>& model_paths, const FeatureSource& source,
                                  const std::vector<std::filesystem::path>& items, std::size_t repetitions,
                                  double sigma);
std::string bench_json(const std::vector<BenchEntry>& entries);

/// Peak resident set size of this process, in KiB.
long peak_rss_kb();

}  // namespace padim
