#include "padim/pipeline.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "padim/error.hpp"
#include "padim/model_io.hpp"
#include "padim/random.hpp"

namespace padim {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<std::size_t> all_taps(const BackboneManifest& m) {
  std::vector<std::size_t> v(m.taps.size());
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

std::vector<std::size_t> resolve_taps(const BackboneManifest& m, std::vector<std::size_t> taps) {
  if (taps.empty()) return all_taps(m);
  for (std::size_t t : taps) {
    if (t >= m.taps.size()) throw ConfigError("tap index " + std::to_string(t) + " out of range");
  }
  return taps;
}

std::size_t embedding_dim(const BackboneManifest& m, const std::vector<std::size_t>& taps) {
  std::size_t d = 0;
  for (std::size_t t : taps) d += m.taps[t].channels;
  return d;
}

ActivationSet select_taps(const ActivationSet& acts, const std::vector<std::size_t>& taps) {
  ActivationSet sub;
  sub.taps.reserve(taps.size());
  for (std::size_t t : taps) {
    if (t >= acts.taps.size()) throw DataError("dimension mismatch: activation set has too few taps");
    sub.taps.push_back(acts.taps[t]);
  }
  return sub;
}

EmbeddingGrid raw_embedding(const ActivationSet& acts, const std::vector<std::size_t>& taps) {
  auto grids = build_embeddings(select_taps(acts, taps));
  if (grids.size() != 1) throw DataError("expected a batch of one image");
  return std::move(grids.front());
}

using TrainVisitor = std::function<void(const std::function<void(const ActivationSet&)>&)>;

// Shared by the streaming and in-memory fit paths. visit() may be called twice (PCA).
PadimModel fit_impl(const TrainVisitor& visit, const BackboneManifest& manifest, const RunConfig& cfg,
                    std::vector<std::size_t> taps, FitReport* report) {
  taps = resolve_taps(manifest, std::move(taps));
  const std::size_t full_dim = embedding_dim(manifest, taps);
  const TapPoint& first = manifest.taps[taps.front()];

  ReductionSpec reduction;
  switch (cfg.reduction) {
    case ReductionKind::none:
      reduction = make_identity_reduction(full_dim);
      break;
    case ReductionKind::random:
      reduction = make_random_reduction(full_dim, cfg.reduced_dim, cfg.seed);
      break;
    case ReductionKind::pca: {
      if (cfg.reduced_dim == 0 || cfg.reduced_dim > full_dim) {
        throw ConfigError("pca target dimension must be in [1, " + std::to_string(full_dim) + "]");
      }
      PcaAccumulator pca(full_dim);
      visit([&](const ActivationSet& acts) { pca.add(raw_embedding(acts, taps)); });
      reduction = pca.finish(cfg.reduced_dim);
      reduction.seed = cfg.seed;
      break;
    }
  }

  GaussianEstimator est(first.height, first.width, reduction.output_dim());
  visit([&](const ActivationSet& acts) {
    acts.check_against(manifest);
    est.add(apply_reduction(raw_embedding(acts, taps), reduction));
  });
  PadimModel model = est.finish(cfg.epsilon, report);
  model.reduction = std::move(reduction);
  model.backbone = manifest;
  model.taps_used = std::move(taps);
  return model;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sem_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

}  // namespace

void RunConfig::validate() const {
  const bool has_backbone = !backbone.empty();
  if (has_backbone == activations.has_value()) {
    throw ConfigError("exactly one feature source is required: --backbone or --activations");
  }
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be > 0");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be > 0");
  if (reduction != ReductionKind::none && reduced_dim == 0) throw ConfigError("reduced dimension must be >= 1");
  preprocess.validate();
}

BackboneSource::BackboneSource(BackbonePackage pkg, PreprocessConfig cfg, std::string id)
    : pkg_(std::move(pkg)), cfg_(std::move(cfg)), id_(std::move(id)) {
  cfg_.mean = pkg_.manifest().mean;
  cfg_.std = pkg_.manifest().std;
  cfg_.validate();
  if (cfg_.output_size() != pkg_.manifest().input_size) {
    throw ConfigError("preprocessed size " + std::to_string(cfg_.output_size()) + " does not match backbone input " +
                      std::to_string(pkg_.manifest().input_size));
  }
}

ActivationSet BackboneSource::features(const fs::path& item) const {
  const TensorF32 x = preprocess_image(read_png_rgb(item), cfg_);
  return pkg_.extract(x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}));
}

GroundTruthMask BackboneSource::mask(const std::optional<fs::path>& path) const {
  if (!path) return GroundTruthMask::empty(map_size(), map_size());
  return GroundTruthMask::from_gray(preprocess_mask(read_png_gray(*path), cfg_));
}

ActivationFileSource::ActivationFileSource(BackboneManifest manifest) : manifest_(std::move(manifest)) {
  manifest_.validate();
  cfg_.resize_to = manifest_.input_size;
  cfg_.crop_to.reset();
  cfg_.mean = manifest_.mean;
  cfg_.std = manifest_.std;
}

ActivationSet ActivationFileSource::features(const fs::path& item) const {
  return read_activation_files(item, manifest_);
}

GroundTruthMask ActivationFileSource::mask(const std::optional<fs::path>& path) const {
  const std::size_t s = map_size();
  if (!path) return GroundTruthMask::empty(s, s);
  GrayImage g = read_png_gray(*path);
  if (g.width != s || g.height != s) g = resize_gray_nearest(g, s, s);
  return GroundTruthMask::from_gray(g);
}

std::unique_ptr<FeatureSource> make_source(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.activations) return std::make_unique<ActivationFileSource>(read_manifest(*cfg.activations));
  fs::path dir = cfg.backbone;
  if (cfg.backbone == "r18" || cfg.backbone == "wr50") dir = cfg.backbone_root / cfg.backbone;
  if (!fs::is_directory(dir)) throw ConfigError("backbone package not found: " + dir.string());
  return std::make_unique<BackboneSource>(BackbonePackage::load(dir), cfg.preprocess, cfg.backbone);
}

std::unique_ptr<FeatureSource> source_for_model(const PadimModel& model, const fs::path& backbone_root) {
  if (model.backbone_id.rfind("activations:", 0) == 0) return std::make_unique<ActivationFileSource>(model.backbone);
  RunConfig cfg;
  cfg.backbone = model.backbone_id;
  cfg.backbone_root = backbone_root;
  cfg.preprocess = model.preprocess;
  auto source = make_source(cfg);
  if (source->manifest().taps != model.backbone.taps) {
    throw DataError("dimension mismatch: backbone package " + model.backbone_id + " differs from the one the model was fit on");
  }
  return source;
}

EmbeddingGrid embed(const ActivationSet& acts, const std::vector<std::size_t>& taps_used,
                    const ReductionSpec& reduction) {
  return apply_reduction(raw_embedding(acts, taps_used), reduction);
}

PadimModel fit_model(const FeatureSource& source, const std::vector<fs::path>& train, const RunConfig& cfg,
                     std::vector<std::size_t> taps_used, FitStats* stats) {
  const auto t0 = Clock::now();
  FitReport report;
  const TrainVisitor visit = [&](const std::function<void(const ActivationSet&)>& fn) {
    for (const auto& item : train) fn(source.features(item));
  };
  PadimModel model = fit_impl(visit, source.manifest(), cfg, std::move(taps_used), &report);
  model.preprocess = source.preprocess();
  model.backbone_id = source.id();
  if (stats) {
    stats->seconds = seconds_since(t0);
    stats->peak_rss_kb = peak_rss_kb();
    stats->numeric = report;
  }
  return model;
}

PadimModel fit_model(const std::vector<ActivationSet>& train, const BackboneManifest& manifest, const RunConfig& cfg,
                     std::vector<std::size_t> taps_used) {
  const TrainVisitor visit = [&](const std::function<void(const ActivationSet&)>& fn) {
    for (const auto& acts : train) fn(acts);
  };
  PadimModel model = fit_impl(visit, manifest, cfg, std::move(taps_used), nullptr);
  model.preprocess.resize_to = manifest.input_size;
  model.preprocess.crop_to.reset();
  model.preprocess.mean = manifest.mean;
  model.preprocess.std = manifest.std;
  model.backbone_id = "activations:" + manifest.name;
  return model;
}

ScoredImage score_activations(const PadimModel& model, const ActivationSet& acts, std::size_t map_size,
                              double sigma) {
  ScoredImage out;
  out.distances = mahalanobis_map(model, embed(acts, model.taps_used, model.reduction));
  out.anomaly = postprocess(out.distances, map_size, sigma);
  return out;
}

ScoredImage score_item(const PadimModel& model, const FeatureSource& source, const fs::path& item, double sigma) {
  if (model.backbone.taps != source.manifest().taps) {
    throw DataError("dimension mismatch: model was fit on a different backbone layout");
  }
  return score_activations(model, source.features(item), source.map_size(), sigma);
}

EvalResult evaluate_maps(const std::vector<AnomalyMap>& maps, const std::vector<GroundTruthMask>& masks,
                         const std::vector<std::uint8_t>& labels, std::string class_name) {
  if (maps.size() != masks.size() || maps.size() != labels.size()) {
    throw DataError("evaluate: maps, masks and labels differ in length");
  }
  EvalResult r;
  r.class_name = std::move(class_name);
  r.n_test = maps.size();
  r.n_anomalous = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));

  std::vector<float> image_scores;
  std::vector<TensorF32> raw;
  image_scores.reserve(maps.size());
  raw.reserve(maps.size());
  for (const auto& m : maps) {
    image_scores.push_back(m.image_score);
    raw.push_back(m.map);
  }
  r.image_roc = image_auroc(image_scores, labels);
  r.pixel_roc = pixel_auroc(raw, masks);
  r.pro = pro_score(raw, masks);
  return r;
}

EvalResult evaluate(const PadimModel& model, const FeatureSource& source, const DatasetIndex& index, double sigma) {
  std::vector<AnomalyMap> maps;
  std::vector<GroundTruthMask> masks;
  std::vector<std::uint8_t> labels;
  for (const auto& s : index.test) {
    maps.push_back(score_item(model, source, s.path, sigma).anomaly);
    masks.push_back(source.mask(s.mask));
    labels.push_back(s.anomalous ? 1 : 0);
  }
  return evaluate_maps(maps, masks, labels, index.class_name);
}

std::string eval_report_json(const std::vector<EvalResult>& results, bool include_curves) {
  json j;
  j["classes"] = json::array();
  double pix = 0.0, img = 0.0, pro = 0.0;
  for (const auto& r : results) {
    json c = {{"class", r.class_name},
              {"n_test", r.n_test},
              {"n_anomalous", r.n_anomalous},
              {"pixel_auroc", 100.0 * r.pixel_roc.auc},
              {"image_auroc", 100.0 * r.image_roc.auc},
              {"pro_score", 100.0 * r.pro.pro_score},
              {"pro_fpr_limit", r.pro.fpr_limit}};
    if (include_curves) {
      c["curves"] = {{"image_roc", {{"fpr", r.image_roc.fpr}, {"tpr", r.image_roc.tpr}}},
                     {"pixel_roc", {{"fpr", r.pixel_roc.fpr}, {"tpr", r.pixel_roc.tpr}}},
                     {"pro", {{"fpr", r.pro.fpr}, {"overlap", r.pro.overlap}}}};
    }
    j["classes"].push_back(std::move(c));
    pix += r.pixel_roc.auc;
    img += r.image_roc.auc;
    pro += r.pro.pro_score;
  }
  const double n = results.empty() ? 1.0 : static_cast<double>(results.size());
  j["aggregate"] = {{"pixel_auroc", 100.0 * pix / n}, {"image_auroc", 100.0 * img / n}, {"pro_score", 100.0 * pro / n}};
  j["units"] = "percent";
  return j.dump(2);
}

std::vector<AblationRow> run_ablation(const std::vector<ActivationSet>& train, const std::vector<ActivationSet>& test,
                                      const std::vector<GroundTruthMask>& masks,
                                      const std::vector<std::uint8_t>& labels, const BackboneManifest& manifest,
                                      const RunConfig& cfg, const AblationOptions& options) {
  const std::size_t map_size = manifest.input_size;
  std::vector<AblationRow> rows;

  auto eval_model = [&](const PadimModel& model) {
    std::vector<AnomalyMap> maps;
    maps.reserve(test.size());
    for (const auto& acts : test) maps.push_back(score_activations(model, acts, map_size, cfg.sigma).anomaly);
    return evaluate_maps(maps, masks, labels);
  };
  auto row_from = [](std::string name, const EvalResult& r) {
    AblationRow row;
    row.name = std::move(name);
    row.pixel_auroc = r.pixel_roc.auc;
    row.pro = r.pro.pro_score;
    row.image_auroc = r.image_roc.auc;
    return row;
  };

  RunConfig base = cfg;
  base.reduction = ReductionKind::none;

  // Per-layer models on their native grids, then their upsampled sum.
  std::vector<PadimModel> layer_models;
  for (std::size_t l = 0; l < manifest.taps.size(); ++l) {
    layer_models.push_back(fit_model(train, manifest, base, {l}));
    rows.push_back(row_from("Layer " + std::to_string(l + 1), eval_model(layer_models.back())));
  }
  {
    std::vector<AnomalyMap> maps;
    for (const auto& acts : test) {
      std::vector<DistanceMap> dists;
      for (const auto& m : layer_models) dists.push_back(score_activations(m, acts, map_size, cfg.sigma).distances);
      maps.push_back(postprocess_ensemble(dists, map_size, cfg.sigma));
    }
    std::string name = "Layer 1";
    for (std::size_t l = 1; l < manifest.taps.size(); ++l) name += "+" + std::to_string(l + 1);
    rows.push_back(row_from(name + " (sum)", evaluate_maps(maps, masks, labels)));
  }

  const std::size_t full_dim = manifest.total_channels();
  rows.push_back(row_from("PaDiM (all " + std::to_string(full_dim) + ")", eval_model(fit_model(train, manifest, base))));

  const std::size_t d = options.reduced_dim ? options.reduced_dim : std::max<std::size_t>(1, full_dim / 4);
  if (options.rd_seeds > 0) {
    std::vector<double> pix, pro, img;
    for (std::size_t s = 0; s < options.rd_seeds; ++s) {
      RunConfig rc = cfg;
      rc.reduction = ReductionKind::random;
      rc.reduced_dim = d;
      rc.seed = mix_seed(cfg.seed, s);
      const auto r = eval_model(fit_model(train, manifest, rc));
      pix.push_back(r.pixel_roc.auc);
      pro.push_back(r.pro.pro_score);
      img.push_back(r.image_roc.auc);
    }
    AblationRow row;
    row.name = "Rd " + std::to_string(d);
    row.pixel_auroc = mean_of(pix);
    row.pro = mean_of(pro);
    row.image_auroc = mean_of(img);
    row.pixel_auroc_sem = sem_of(pix);
    row.pro_sem = sem_of(pro);
    row.runs = options.rd_seeds;
    rows.push_back(row);
  }
  if (options.include_pca) {
    RunConfig rc = cfg;
    rc.reduction = ReductionKind::pca;
    rc.reduced_dim = d;
    rows.push_back(row_from("PCA " + std::to_string(d), eval_model(fit_model(train, manifest, rc))));
  }
  return rows;
}

std::string ablation_markdown(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(1);
  os << "| Model | Pixel AUROC % | PRO % | Image AUROC % | Runs |\n";
  os << "|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    os << "| " << r.name << " | " << 100.0 * r.pixel_auroc;
    if (r.runs > 1) os << " ± " << 100.0 * r.pixel_auroc_sem;
    os << " | " << 100.0 * r.pro;
    if (r.runs > 1) os << " ± " << 100.0 * r.pro_sem;
    os << " | " << 100.0 * r.image_auroc << " | " << r.runs << " |\n";
  }
  return os.str();
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
  json j = json::array();
  for (const auto& r : rows) {
    j.push_back({{"name", r.name},
                 {"pixel_auroc", 100.0 * r.pixel_auroc},
                 {"pixel_auroc_sem", 100.0 * r.pixel_auroc_sem},
                 {"pro_score", 100.0 * r.pro},
                 {"pro_score_sem", 100.0 * r.pro_sem},
                 {"image_auroc", 100.0 * r.image_auroc},
                 {"runs", r.runs}});
  }
  return json{{"rows", j}, {"units", "percent"}}.dump(2);
}

std::vector<BenchEntry> benchmark(const std::vector<fs::path>& model_paths, const FeatureSource& source,
                                  const std::vector<fs::path>& items, std::size_t repetitions, double sigma) {
  if (repetitions == 0) throw ConfigError("repetitions must be >= 1");
  if (items.empty()) throw ConfigError("benchmark needs at least one image");
  if (model_paths.empty()) throw ConfigError("benchmark needs at least one model");

  std::vector<ActivationSet> acts(items.size());
  std::vector<double> extract_times;
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < items.size(); ++i) acts[i] = source.features(items[i]);
    extract_times.push_back(seconds_since(t0) / static_cast<double>(items.size()));
  }

  std::vector<BenchEntry> out;
  for (const auto& path : model_paths) {
    const PadimModel model = load_model(path);
    if (model.backbone.taps != source.manifest().taps) {
      throw DataError("dimension mismatch: " + path.string() + " was fit on a different backbone layout");
    }
    BenchEntry e;
    e.model_path = path.string();
    e.n_train = model.n_train;
    e.model_bytes = fs::file_size(path);
    e.extract_seconds = mean_of(extract_times);
    std::vector<double> times;
    float sink = 0.0f;
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      const auto t0 = Clock::now();
      for (const auto& a : acts) sink += score_activations(model, a, source.map_size(), sigma).anomaly.image_score;
      times.push_back(seconds_since(t0) / static_cast<double>(acts.size()));
    }
    if (!std::isfinite(sink)) throw NumericError("non-finite anomaly score during benchmark");
    e.score_seconds = mean_of(times);
    std::sort(times.begin(), times.end());
    e.score_median_seconds = times[times.size() / 2];
    out.push_back(e);
  }
  return out;
}

std::string bench_json(const std::vector<BenchEntry>& entries) {
  json j = json::array();
  for (const auto& e : entries) {
    j.push_back({{"model", e.model_path},
                 {"n_train", e.n_train},
                 {"model_bytes", e.model_bytes},
                 {"extract_seconds_per_image", e.extract_seconds},
                 {"score_seconds_per_image", e.score_seconds},
                 {"score_median_seconds_per_image", e.score_median_seconds}});
  }
  return json{{"models", j}, {"peak_rss_kb", peak_rss_kb()}}.dump(2);
}

long peak_rss_kb() {
  rusage u{};
  getrusage(RUSAGE_SELF, &u);
  return u.ru_maxrss;
}

}  // namespace padim
