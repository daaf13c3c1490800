#include <gtest/gtest.h>

#include "json.hpp"
#include "onnx_builder.hpp"
#include "padim/error.hpp"
#include "padim/model_io.hpp"
#include "padim/pipeline.hpp"
#include "padim/synthetic.hpp"
#include "test_util.hpp"

using namespace padim;
namespace fs = std::filesystem;

namespace {

RgbImage noise_image(Rng& rng, std::size_t size) {
  RgbImage img(size, size);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(uniform_index(rng, 256));
  return img;
}

SyntheticConfig small_synthetic(SyntheticAnomaly kind = SyntheticAnomaly::mean_shift) {
  SyntheticConfig c;
  c.input_size = 32;
  c.grid = 8;
  c.channels = {4, 6, 8};
  c.n_train = 30;
  c.n_test_normal = 3;
  c.n_test_anomalous = 4;
  c.anomaly = kind;
  return c;
}

RunConfig activation_config() {
  RunConfig cfg;
  cfg.activations = "unused";
  return cfg;
}

std::vector<ActivationSet> acts_of(const std::vector<SyntheticSample>& s) {
  std::vector<ActivationSet> out;
  for (const auto& x : s) out.push_back(x.acts);
  return out;
}

}  // namespace

TEST(Pipeline, ResNet18RandomSubsetModelShape) {
  testutil::TempDir dir;
  onnx_test::write_resnet_trunk("r18", dir / "backbones/r18");
  Rng rng(51);
  std::vector<fs::path> train;
  for (int i = 0; i < 8; ++i) {
    train.push_back(dir / ("img" + std::to_string(i) + ".png"));
    write_png(noise_image(rng, 64), train.back());
  }
  RunConfig cfg;
  cfg.backbone = "r18";
  cfg.backbone_root = dir / "backbones";
  cfg.reduction = ReductionKind::random;
  cfg.reduced_dim = 100;
  cfg.seed = 3;
  const auto source = make_source(cfg);
  const auto model = fit_model(*source, train, cfg);
  EXPECT_EQ(model.height, 56u);
  EXPECT_EQ(model.width, 56u);
  EXPECT_EQ(model.dim, 100u);
  EXPECT_EQ(model.n_train, 8u);
  EXPECT_EQ(model.reduction.full_dim, 448u);
  EXPECT_EQ(model.backbone_id, "r18");

  save_model(model, dir / "m.padim");
  const auto again = source_for_model(load_model(dir / "m.padim"), cfg.backbone_root);
  const auto scored = score_item(model, *again, train[0], kDefaultSigma);
  EXPECT_EQ(scored.distances.shape(), (Shape{56, 56}));
  EXPECT_EQ(scored.anomaly.map.shape(), (Shape{224, 224}));
}

TEST(Pipeline, NeedsTwoTrainingImages) {
  const auto ds = generate_synthetic(small_synthetic());
  EXPECT_THROW(fit_model(std::vector<ActivationSet>{ds.train[0].acts}, ds.manifest, activation_config()), DataError);
}

TEST(Pipeline, MismatchedActivationsAreRejected) {
  const auto ds = generate_synthetic(small_synthetic());
  const auto model = fit_model(acts_of(ds.train), ds.manifest, activation_config());
  Rng rng(52);
  const auto other = testutil::toy_manifest({{"a", 4, 8, 8}, {"b", 6, 4, 4}, {"c", 9, 2, 2}});
  try {
    score_activations(model, testutil::random_acts(rng, other), 32, kDefaultSigma);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("dimension mismatch"), std::string::npos);
  }
}

TEST(Pipeline, FullDimensionSubsetEqualsUnreduced) {
  const auto ds = generate_synthetic(small_synthetic());
  const auto cfg = activation_config();
  auto rd = cfg;
  rd.reduction = ReductionKind::random;
  rd.reduced_dim = ds.manifest.total_channels();
  const auto full = fit_model(acts_of(ds.train), ds.manifest, cfg);
  const auto same = fit_model(acts_of(ds.train), ds.manifest, rd);
  EXPECT_EQ(full.mean, same.mean);
  EXPECT_EQ(full.cov_factor, same.cov_factor);
  for (const auto& s : ds.test)
    EXPECT_EQ(score_activations(full, s.acts, 32, 4.0).anomaly.map, score_activations(same, s.acts, 32, 4.0).anomaly.map);
}

TEST(Pipeline, FileSourceMatchesInMemoryFit) {
  testutil::TempDir dir;
  const auto ds = generate_synthetic(small_synthetic());
  write_synthetic_dataset(ds, dir / "syn");
  const auto idx = scan_dataset(dir / "syn");
  ASSERT_EQ(idx.train.size(), ds.train.size());
  RunConfig cfg;
  cfg.activations = dir / "syn/manifest.json";
  for (auto kind : {ReductionKind::none, ReductionKind::pca}) {
    cfg.reduction = kind;
    cfg.reduced_dim = kind == ReductionKind::pca ? 5 : 0;
    const auto source = make_source(cfg);
    const auto streamed = fit_model(*source, idx.train, cfg);
    const auto direct = fit_model(acts_of(ds.train), ds.manifest, cfg);
    EXPECT_EQ(streamed.mean, direct.mean);
    EXPECT_EQ(streamed.cov_factor, direct.cov_factor);
  }
}

TEST(Pipeline, EvaluateOnActivationTree) {
  testutil::TempDir dir;
  const auto ds = generate_synthetic(small_synthetic());
  write_synthetic_dataset(ds, dir / "syn");
  RunConfig cfg;
  cfg.activations = dir / "syn/manifest.json";
  const auto source = make_source(cfg);
  const auto idx = scan_dataset(dir / "syn");
  const auto model = fit_model(*source, idx.train, cfg);
  const auto r = evaluate(model, *source, idx, cfg.sigma);
  EXPECT_EQ(r.n_test, 7u);
  EXPECT_EQ(r.n_anomalous, 4u);
  EXPECT_GT(r.pixel_roc.auc, 0.9);

  const auto j = nlohmann::json::parse(eval_report_json({r}, true));
  EXPECT_EQ(j["units"], "percent");
  ASSERT_EQ(j["classes"].size(), 1u);
  const auto& c = j["classes"][0];
  for (const char* key : {"class", "pixel_auroc", "pro_score", "image_auroc", "curves"}) EXPECT_TRUE(c.contains(key)) << key;
  EXPECT_NEAR(c["pixel_auroc"].get<double>(), 100.0 * r.pixel_roc.auc, 1e-9);
  EXPECT_TRUE(j.contains("aggregate"));
}

TEST(Pipeline, AllNormalEvaluationIsSingleClass) {
  const std::vector<AnomalyMap> maps{{TensorF32({4, 4}, 1.0f), 1.0f}, {TensorF32({4, 4}, 2.0f), 2.0f}};
  const std::vector<GroundTruthMask> masks{GroundTruthMask::empty(4, 4), GroundTruthMask::empty(4, 4)};
  EXPECT_THROW(evaluate_maps(maps, masks, {0, 0}), DataError);
}

TEST(Pipeline, AblationRows) {
  const auto ds = generate_synthetic(small_synthetic(SyntheticAnomaly::correlation));
  std::vector<GroundTruthMask> masks;
  std::vector<std::uint8_t> labels;
  for (const auto& s : ds.test) {
    masks.push_back(GroundTruthMask::from_gray(s.mask));
    labels.push_back(s.anomalous);
  }
  AblationOptions opt;
  opt.rd_seeds = 2;
  const auto rows = run_ablation(acts_of(ds.train), acts_of(ds.test), masks, labels, ds.manifest, activation_config(), opt);
  std::vector<std::string> names;
  for (const auto& r : rows) names.push_back(r.name);
  const std::vector<std::string> expected{"Layer 1", "Layer 2", "Layer 3", "Layer 1+2+3 (sum)", "PaDiM (all 18)", "Rd 4",
                                          "PCA 4"};
  EXPECT_EQ(names, expected);
  EXPECT_EQ(rows[5].runs, 2u);
  const auto j = nlohmann::json::parse(ablation_json(rows));
  EXPECT_EQ(j["rows"].size(), rows.size());
  EXPECT_EQ(j["units"], "percent");
  EXPECT_NE(ablation_markdown(rows).find("PaDiM (all 18)"), std::string::npos);
}

TEST(Pipeline, BenchmarkArguments) {
  testutil::TempDir dir;
  const auto ds = generate_synthetic(small_synthetic());
  write_synthetic_dataset(ds, dir / "syn");
  RunConfig cfg;
  cfg.activations = dir / "syn/manifest.json";
  const auto source = make_source(cfg);
  const auto idx = scan_dataset(dir / "syn");
  save_model(fit_model(*source, idx.train, cfg), dir / "m.padim");
  const std::vector<fs::path> models{dir / "m.padim"};
  const std::vector<fs::path> items{idx.test[0].path};
  EXPECT_THROW(benchmark(models, *source, items, 0, 4.0), ConfigError);
  EXPECT_THROW(benchmark(models, *source, {}, 1, 4.0), ConfigError);
  const auto entries = benchmark(models, *source, items, 2, 4.0);
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_EQ(entries[0].n_train, ds.train.size());
  EXPECT_EQ(entries[0].model_bytes, fs::file_size(dir / "m.padim"));
  EXPECT_EQ(nlohmann::json::parse(bench_json(entries))["models"].size(), 1u);
}

TEST(Pipeline, ConfigValidation) {
  RunConfig none;
  EXPECT_THROW(none.validate(), ConfigError);
  RunConfig both;
  both.backbone = "r18";
  both.activations = "x";
  EXPECT_THROW(both.validate(), ConfigError);
  RunConfig rd = activation_config();
  rd.reduction = ReductionKind::random;
  EXPECT_THROW(rd.validate(), ConfigError);
  RunConfig eps = activation_config();
  eps.epsilon = -1.0;
  EXPECT_THROW(eps.validate(), ConfigError);
  RunConfig missing;
  missing.backbone = "nope";
  missing.backbone_root = "/nonexistent";
  EXPECT_THROW(make_source(missing), ConfigError);
}
