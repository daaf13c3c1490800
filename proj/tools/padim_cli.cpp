// padim: fit, score, evaluate, ablate and benchmark PaDiM models.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "padim/dataset.hpp"
#include "padim/error.hpp"
#include "padim/model_io.hpp"
#include "padim/pipeline.hpp"
#include "padim/synthetic.hpp"

namespace fs = std::filesystem;
using namespace padim;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kRuntime = 4 };

struct SourceFlags {
  std::string backbone;
  std::string activations;
  std::string backbone_root = "backbones";
  std::size_t resize = 256;
  std::size_t crop = 224;
  bool no_crop = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--backbone", backbone, "r18, wr50, or a backbone package directory");
    cmd->add_option("--activations", activations, "manifest.json of a precomputed activation tree");
    cmd->add_option("--backbone-root", backbone_root, "directory holding the r18/ and wr50/ packages");
    cmd->add_option("--resize", resize, "square resize before cropping");
    cmd->add_option("--crop", crop, "center crop size");
    cmd->add_flag("--no-crop", no_crop, "resize only");
  }

  void fill(RunConfig& cfg) const {
    cfg.backbone = backbone;
    if (!activations.empty()) cfg.activations = fs::path(activations);
    cfg.backbone_root = backbone_root;
    cfg.preprocess.resize_to = resize;
    cfg.preprocess.crop_to = no_crop ? std::nullopt : std::optional<std::size_t>(crop);
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    std::cout << text << "\n";
  } else {
    write_text(out_path, text + "\n");
  }
}

bool holds_activations(const fs::path& dir) {
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".pft") return true;
  return false;
}

// Items passed on the command line may be class directories (test split is used), folders of items
// (e.g. test/good), or single items.
std::vector<fs::path> expand_items(const std::vector<std::string>& args) {
  std::vector<fs::path> items;
  for (const auto& a : args) {
    const fs::path p(a);
    if (fs::is_directory(p / "test")) {
      for (const auto& s : scan_dataset(p).test) items.push_back(s.path);
    } else if (fs::is_directory(p) && !holds_activations(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_directory() || e.path().extension() == ".png") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      items.insert(items.end(), found.begin(), found.end());
    } else {
      items.push_back(p);
    }
  }
  return items;
}

int run(int argc, char** argv) {
  CLI::App app{"PaDiM anomaly detection"};
  app.require_subcommand(1);

  // fit
  SourceFlags fit_src;
  std::string fit_data, fit_out = "model.padim";
  std::size_t fit_rd = 0, fit_pca = 0;
  std::uint64_t fit_seed = 0;
  double fit_eps = kDefaultEpsilon;
  auto* fit_cmd = app.add_subcommand("fit", "fit a model on the train/good split of a class directory");
  fit_src.add_to(fit_cmd);
  fit_cmd->add_option("--data", fit_data, "class directory (train/good, test/, ground_truth/)")->required();
  fit_cmd->add_option("-o,--out", fit_out, "model file");
  auto* rd_opt = fit_cmd->add_option("--rd", fit_rd, "random dimensionality reduction to N dims");
  fit_cmd->add_option("--pca", fit_pca, "PCA reduction to N dims")->excludes(rd_opt);
  fit_cmd->add_option("--seed", fit_seed, "seed for random reduction");
  fit_cmd->add_option("--epsilon", fit_eps, "covariance regularization");

  // score
  std::string score_model, score_out = "scores", score_root = "backbones";
  std::vector<std::string> score_items;
  double score_sigma = kDefaultSigma;
  bool score_heatmap = true;
  auto* score_cmd = app.add_subcommand("score", "anomaly maps and image scores");
  score_cmd->add_option("--model", score_model)->required();
  score_cmd->add_option("items", score_items, "PNG images, activation item directories, or class directories")
      ->required();
  score_cmd->add_option("-o,--out", score_out, "output directory");
  score_cmd->add_option("--sigma", score_sigma, "Gaussian blur sigma in output pixels");
  score_cmd->add_option("--backbone-root", score_root);
  score_cmd->add_flag("--heatmap,!--no-heatmap", score_heatmap, "write PNG heatmaps");

  // eval
  std::string eval_model, eval_out, eval_root = "backbones";
  std::vector<std::string> eval_data;
  double eval_sigma = kDefaultSigma;
  bool eval_curves = false;
  auto* eval_cmd = app.add_subcommand("eval", "pixel AUROC, image AUROC and PRO on a test split");
  eval_cmd->add_option("--model", eval_model)->required();
  eval_cmd->add_option("--data", eval_data, "class directory")->required();
  eval_cmd->add_option("-o,--out", eval_out, "report JSON (stdout when omitted)");
  eval_cmd->add_option("--sigma", eval_sigma);
  eval_cmd->add_option("--backbone-root", eval_root);
  eval_cmd->add_flag("--curves", eval_curves, "include ROC and PRO curves in the report");

  // ablate
  SourceFlags abl_src;
  std::string abl_data, abl_md, abl_json;
  std::size_t abl_dim = 0, abl_seeds = 10;
  std::uint64_t abl_seed = 0;
  double abl_eps = kDefaultEpsilon, abl_sigma = kDefaultSigma;
  bool abl_no_pca = false;
  auto* abl_cmd = app.add_subcommand("ablate", "per-layer, sum ensemble, full, Rd and PCA comparison");
  abl_src.add_to(abl_cmd);
  abl_cmd->add_option("--data", abl_data)->required();
  abl_cmd->add_option("--dim", abl_dim, "reduced dimension for the Rd/PCA rows (default D/4)");
  abl_cmd->add_option("--rd-seeds", abl_seeds, "number of Rd models averaged");
  abl_cmd->add_option("--seed", abl_seed);
  abl_cmd->add_option("--epsilon", abl_eps);
  abl_cmd->add_option("--sigma", abl_sigma);
  abl_cmd->add_flag("--no-pca", abl_no_pca);
  abl_cmd->add_option("--markdown", abl_md, "write the table as markdown");
  abl_cmd->add_option("--json", abl_json, "write the table as JSON");

  // bench
  std::vector<std::string> bench_models, bench_items;
  std::size_t bench_reps = 3;
  std::string bench_out, bench_root = "backbones";
  double bench_sigma = kDefaultSigma;
  auto* bench_cmd = app.add_subcommand("bench", "per-image inference time and model size");
  bench_cmd->add_option("--model", bench_models, "one or more model files")->required();
  bench_cmd->add_option("--images", bench_items, "images, activation items or class directories")->required();
  bench_cmd->add_option("--repetitions", bench_reps);
  bench_cmd->add_option("--sigma", bench_sigma);
  bench_cmd->add_option("--backbone-root", bench_root);
  bench_cmd->add_option("-o,--out", bench_out);

  // synth
  std::string synth_out, synth_kind = "mean_shift";
  SyntheticConfig synth_cfg;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic activation-file dataset");
  synth_cmd->add_option("-o,--out", synth_out, "class directory to create")->required();
  synth_cmd->add_option("--anomaly", synth_kind)->check(CLI::IsMember({"mean_shift", "correlation"}));
  synth_cmd->add_option("--n-train", synth_cfg.n_train);
  synth_cmd->add_option("--seed", synth_cfg.seed);

  // rd
  std::string rdd_data, rdd_out;
  std::uint64_t rdd_seed = 0;
  auto* rd_cmd = app.add_subcommand("rd", "write a randomly rotated and cropped copy of a class directory");
  rd_cmd->add_option("--data", rdd_data)->required();
  rd_cmd->add_option("-o,--out", rdd_out, "output root")->required();
  rd_cmd->add_option("--seed", rdd_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  if (*fit_cmd) {
    RunConfig cfg;
    fit_src.fill(cfg);
    cfg.epsilon = fit_eps;
    cfg.seed = fit_seed;
    if (fit_rd) {
      cfg.reduction = ReductionKind::random;
      cfg.reduced_dim = fit_rd;
    } else if (fit_pca) {
      cfg.reduction = ReductionKind::pca;
      cfg.reduced_dim = fit_pca;
    }
    auto source = make_source(cfg);
    const DatasetIndex index = scan_dataset(fit_data);
    FitStats stats;
    const PadimModel model = fit_model(*source, index.train, cfg, {}, &stats);
    save_model(model, fit_out);
    std::cerr << "fit: " << index.train.size() << " images, grid " << model.height << "x" << model.width << ", D="
              << model.dim << ", " << stats.seconds << " s, peak RSS " << stats.peak_rss_kb << " KiB\n";
    if (stats.numeric.regularization_retries > 0) {
      std::cerr << "warning: " << stats.numeric.regularization_retries
                << " positions needed a larger epsilon (max " << stats.numeric.max_epsilon_used << ")\n";
    }
    return kOk;
  }

  if (*score_cmd) {
    const PadimModel model = load_model(score_model);
    auto source = source_for_model(model, score_root);
    fs::create_directories(score_out);
    nlohmann::json report = nlohmann::json::array();
    for (const auto& item : expand_items(score_items)) {
      const ScoredImage s = score_item(model, *source, item, score_sigma);
      std::string stem = item.stem().string();
      if (item.has_parent_path()) stem = item.parent_path().filename().string() + "_" + stem;
      write_tensor(s.anomaly.map, fs::path(score_out) / (stem + ".pft"));
      if (score_heatmap) write_png(render_heatmap(s.anomaly), fs::path(score_out) / (stem + ".png"));
      report.push_back({{"item", item.string()}, {"image_score", s.anomaly.image_score}, {"map", stem + ".pft"}});
    }
    write_text(fs::path(score_out) / "scores.json", report.dump(2) + "\n");
    std::cout << report.dump(2) << "\n";
    return kOk;
  }

  if (*eval_cmd) {
    const PadimModel model = load_model(eval_model);
    auto source = source_for_model(model, eval_root);
    std::vector<EvalResult> results;
    for (const auto& d : eval_data) results.push_back(evaluate(model, *source, scan_dataset(d), eval_sigma));
    emit(eval_out, eval_report_json(results, eval_curves));
    return kOk;
  }

  if (*abl_cmd) {
    RunConfig cfg;
    abl_src.fill(cfg);
    cfg.epsilon = abl_eps;
    cfg.sigma = abl_sigma;
    cfg.seed = abl_seed;
    auto source = make_source(cfg);
    const DatasetIndex index = scan_dataset(abl_data);
    std::vector<ActivationSet> train, test;
    std::vector<GroundTruthMask> masks;
    std::vector<std::uint8_t> labels;
    for (const auto& p : index.train) train.push_back(source->features(p));
    for (const auto& s : index.test) {
      test.push_back(source->features(s.path));
      masks.push_back(source->mask(s.mask));
      labels.push_back(s.anomalous ? 1 : 0);
    }
    AblationOptions opt;
    opt.reduced_dim = abl_dim;
    opt.rd_seeds = abl_seeds;
    opt.include_pca = !abl_no_pca;
    const auto rows = run_ablation(train, test, masks, labels, source->manifest(), cfg, opt);
    const std::string md = ablation_markdown(rows);
    std::cout << md;
    if (!abl_md.empty()) write_text(abl_md, md);
    if (!abl_json.empty()) write_text(abl_json, ablation_json(rows) + "\n");
    return kOk;
  }

  if (*bench_cmd) {
    std::vector<fs::path> models(bench_models.begin(), bench_models.end());
    const PadimModel first = load_model(models.front());
    auto source = source_for_model(first, bench_root);
    emit(bench_out, bench_json(benchmark(models, *source, expand_items(bench_items), bench_reps, bench_sigma)));
    return kOk;
  }

  if (*synth_cmd) {
    synth_cfg.anomaly = synth_kind == "correlation" ? SyntheticAnomaly::correlation : SyntheticAnomaly::mean_shift;
    write_synthetic_dataset(generate_synthetic(synth_cfg), synth_out);
    std::cerr << "wrote " << synth_out << "\n";
    return kOk;
  }

  if (*rd_cmd) {
    RdTransform t;
    t.seed = rdd_seed;
    const DatasetIndex out = make_rd_dataset(scan_dataset(rdd_data), rdd_seed, rdd_out, t);
    std::cerr << "wrote " << out.root.string() << " (" << out.train.size() << " train, " << out.test.size()
              << " test)\n";
    return kOk;
  }
  return kConfig;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kRuntime;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
