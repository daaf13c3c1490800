// Acceptance suite: one PASS/FAIL/SKIP line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "padim/error.hpp"
#include "padim/model_io.hpp"
#include "padim/pipeline.hpp"
#include "padim/synthetic.hpp"

using namespace padim;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(const char* name, bool pass, const std::string& detail, double seconds) {
  std::printf("%s  %-28s %s  [%.2f s]\n", pass ? "PASS" : "FAIL", name, detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++failures;
}

void skip(const char* name, const std::string& why) {
  std::printf("SKIP  %-28s %s\n", name, why.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::vector<EmbeddingGrid> vector_grids(const oracle::Matrix& samples, std::size_t h = 1, std::size_t w = 1) {
  // Consecutive groups of h*w samples fill one grid.
  std::vector<EmbeddingGrid> grids;
  const std::size_t d = samples.front().size(), p = h * w;
  for (std::size_t i = 0; i + p <= samples.size(); i += p) {
    EmbeddingGrid g(d, h, w);
    for (std::size_t q = 0; q < p; ++q)
      for (std::size_t k = 0; k < d; ++k) g.at(k, q) = static_cast<float>(samples[i + q][k]);
    grids.push_back(std::move(g));
  }
  return grids;
}

// Correlated Gaussian samples x = A z, A = I + spread * G / sqrt(D).
struct Sampler {
  std::size_t d;
  oracle::Matrix a;
  std::vector<double> mu;
  Sampler(Rng& rng, std::size_t dim, double spread = 0.4) : d(dim), a(dim, std::vector<double>(dim)), mu(dim) {
    const double scale = spread / std::sqrt(static_cast<double>(dim));
    for (std::size_t i = 0; i < d; ++i) {
      mu[i] = 2.0 * standard_normal(rng);
      for (std::size_t j = 0; j < d; ++j) a[i][j] = (i == j ? 1.0 : 0.0) + scale * standard_normal(rng);
    }
  }
  std::vector<double> draw(Rng& rng) const {
    std::vector<double> z(d), x(mu);
    for (auto& v : z) v = standard_normal(rng);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) x[i] += a[i][j] * z[j];
    return x;
  }
};

void covariance_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(mix_seed(1001, seed));
    const std::size_t d = 1 + uniform_index(rng, 8);
    const std::size_t n = 2 + uniform_index(rng, 49);
    const Sampler s(rng, d);
    oracle::Matrix samples;
    for (std::size_t i = 0; i < n; ++i) {
      // Round through float: the estimator sees float embeddings.
      auto x = s.draw(rng);
      for (auto& v : x) v = static_cast<float>(v);
      samples.push_back(x);
    }
    GaussianEstimator est(1, 1, d);
    for (const auto& g : vector_grids(samples)) est.add(g);
    const auto ref_cov = oracle::covariance(samples, kDefaultEpsilon);
    const auto ref_mu = oracle::mean(samples);
    const auto cov = est.covariance(0, kDefaultEpsilon);
    const auto mu = est.mean(0);
    for (std::size_t i = 0; i < d; ++i) {
      worst = std::max(worst, std::fabs(mu[i] - ref_mu[i]));
      for (std::size_t j = 0; j < d; ++j) worst = std::max(worst, std::fabs(cov[i * d + j] - ref_cov[i][j]));
    }
  }
  const double secs = since(t0);
  report("covariance-oracle", worst < 1e-6 && secs < 5.0, fmt("max|diff| %.3g (< 1e-6), 20 seeds", worst), secs);
}

void mahalanobis_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t pairs = 0;
  for (std::uint64_t m = 0; m < 50; ++m) {
    Rng rng(mix_seed(2002, m));
    const std::size_t d = 1 + uniform_index(rng, 8);
    const std::size_t n = d + 2 + uniform_index(rng, 40);
    const Sampler s(rng, d);
    // One model over a 4x5 grid, every position trained on its own draws.
    oracle::Matrix train;
    for (std::size_t i = 0; i < n * 20; ++i) train.push_back(s.draw(rng));
    GaussianEstimator est(4, 5, d);
    for (const auto& g : vector_grids(train, 4, 5)) est.add(g);
    const auto model = est.finish(kDefaultEpsilon);
    oracle::Matrix query;
    for (std::size_t q = 0; q < 20; ++q) {
      auto x = s.draw(rng);
      for (auto& v : x) v = static_cast<float>(3.0 * (v - s.mu[0]) + s.mu[0]);
      query.push_back(x);
    }
    const auto dist = mahalanobis_map(model, vector_grids(query, 4, 5).front());
    for (std::size_t p = 0; p < 20; ++p) {
      oracle::Matrix pos;
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v(train[i * 20 + p]);
        for (auto& x : v) x = static_cast<float>(x);
        pos.push_back(v);
      }
      const auto cov = oracle::covariance(pos, kDefaultEpsilon);
      const auto mu = oracle::mean(pos);
      const double ref = std::sqrt(oracle::squared_mahalanobis(cov, mu, query[p]));
      worst = std::max(worst, std::fabs(dist.values()[p] - ref) / std::max(ref, 1e-12));
      ++pairs;
    }
  }
  const double secs = since(t0);
  report("mahalanobis-oracle", worst < 1e-5 && secs < 5.0,
         fmt("max rel err %.3g (< 1e-5), %.0f pairs", worst, static_cast<double>(pairs)), secs);
}

void chi_square() {
  const auto t0 = Clock::now();
  Rng rng(3003);
  const std::size_t d = 25;
  const Sampler s(rng, d);
  oracle::Matrix train, test;
  for (int i = 0; i < 20000; ++i) train.push_back(s.draw(rng));
  for (int i = 0; i < 10000; ++i) test.push_back(s.draw(rng));
  GaussianEstimator est(1, 1, d);
  for (const auto& g : vector_grids(train)) est.add(g);
  const auto model = est.finish(kDefaultEpsilon);
  double sum = 0.0;
  std::vector<float> x(d);
  for (const auto& v : test) {
    std::transform(v.begin(), v.end(), x.begin(), [](double a) { return static_cast<float>(a); });
    const double m = mahalanobis(model, 0, x);
    sum += m * m;
  }
  const double mean_sq = sum / static_cast<double>(test.size());
  const double rel = std::fabs(mean_sq - static_cast<double>(d)) / static_cast<double>(d);
  // Epsilon shrinks M^2 along low-variance directions: E = sum lambda / (lambda + eps).
  oracle::Matrix cov(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < d; ++k) cov[i][j] += s.a[i][k] * s.a[j][k];
  auto shifted = cov;
  for (std::size_t i = 0; i < d; ++i) shifted[i][i] += kDefaultEpsilon;
  const auto inv = oracle::inverse(shifted);
  double expected = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < d; ++k) expected += inv[i][k] * cov[k][i];
  report("chi-square", rel < 0.05,
         fmt("mean M^2 %.3f vs D=25 (rel %.4f < 0.05; eps-adjusted expectation %.3f), %.0f samples", mean_sq, rel,
             expected, static_cast<double>(test.size())),
         since(t0));
}

void metric_oracles() {
  const auto t0 = Clock::now();
  Rng rng(4004);
  std::size_t exact = 0;
  for (int c = 0; c < 200; ++c) {
    const std::size_t n = 2 + uniform_index(rng, 300);
    std::vector<float> s(n);
    std::vector<std::uint8_t> l(n);
    const bool ties = c % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      l[i] = static_cast<std::uint8_t>(i < 2 ? i : uniform_index(rng, 2));
      s[i] = ties ? static_cast<float>(uniform_index(rng, 10)) : static_cast<float>(standard_normal(rng) + l[i]);
    }
    if (roc_auc(s, l).auc == oracle::mann_whitney(s, l)) ++exact;
  }
  double worst = 0.0;
  const int fixtures = 25;
  for (int f = 0; f < fixtures; ++f) {
    oracle::ProInput in;
    in.h = 8 + uniform_index(rng, 16);
    in.w = 8 + uniform_index(rng, 16);
    std::vector<TensorF32> maps;
    std::vector<GroundTruthMask> masks;
    const std::size_t images = 1 + uniform_index(rng, 4);
    for (std::size_t k = 0; k < images; ++k) {
      std::vector<std::uint8_t> bin(in.h * in.w, 0);
      // A few random blobs.
      const std::size_t blobs = uniform_index(rng, 4) + (k == 0 ? 1 : 0);
      for (std::size_t b = 0; b < blobs; ++b) {
        const std::size_t y0 = uniform_index(rng, in.h - 2), x0 = uniform_index(rng, in.w - 2);
        const std::size_t bh = 1 + uniform_index(rng, 5), bw = 1 + uniform_index(rng, 5);
        for (std::size_t y = y0; y < std::min(in.h - 1, y0 + bh); ++y)
          for (std::size_t x = x0; x < std::min(in.w, x0 + bw); ++x) bin[y * in.w + x] = 1;
      }
      std::vector<float> map(in.h * in.w);
      for (std::size_t i = 0; i < map.size(); ++i) {
        const double v = standard_normal(rng) + 1.5 * bin[i];
        map[i] = f % 3 == 0 ? std::round(static_cast<float>(v) * 4.0f) : static_cast<float>(v);
      }
      in.maps.push_back(map);
      in.masks.push_back(bin);
      maps.emplace_back(Shape{in.h, in.w}, map);
      masks.push_back(GroundTruthMask::from_binary(in.h, in.w, bin));
    }
    worst = std::max(worst, std::fabs(pro_score(maps, masks).pro_score - oracle::pro(in, 0.3)));
  }
  report("metric-oracles", exact == 200 && worst < 1e-6,
         fmt("roc_auc == Mann-Whitney on %.0f/200; PRO max|diff| %.3g (< 1e-6) on %.0f fixtures",
             static_cast<double>(exact), worst, fixtures),
         since(t0));
}

struct SuiteResult {
  double pixel = 0, pro = 0, image = 0, secs = 0;
};

SyntheticConfig suite_config(SyntheticAnomaly kind) {
  SyntheticConfig c;
  c.anomaly = kind;
  c.seed = kind == SyntheticAnomaly::mean_shift ? 11 : 12;
  return c;
}

// Writes the suite to disk and runs fit + evaluate through the activation-file source.
SuiteResult run_file_suite(const SyntheticDataset& ds, const fs::path& dir, RunConfig cfg) {
  const auto t0 = Clock::now();
  write_synthetic_dataset(ds, dir);
  cfg.activations = dir / "manifest.json";
  const auto source = make_source(cfg);
  const auto index = scan_dataset(dir);
  const auto model = fit_model(*source, index.train, cfg);
  const auto r = evaluate(model, *source, index, cfg.sigma);
  return {r.pixel_roc.auc, r.pro.pro_score, r.image_roc.auc, since(t0)};
}

struct InMemory {
  std::vector<ActivationSet> train, test;
  std::vector<GroundTruthMask> masks;
  std::vector<std::uint8_t> labels;
};

InMemory in_memory(const SyntheticDataset& ds) {
  InMemory m;
  for (const auto& s : ds.train) m.train.push_back(s.acts);
  for (const auto& s : ds.test) {
    m.test.push_back(s.acts);
    m.masks.push_back(GroundTruthMask::from_gray(s.mask));
    m.labels.push_back(s.anomalous ? 1 : 0);
  }
  return m;
}

const AblationRow& row(const std::vector<AblationRow>& rows, const std::string& prefix) {
  for (const auto& r : rows)
    if (r.name.rfind(prefix, 0) == 0) return r;
  throw DataError("missing ablation row " + prefix);
}

void synthetic_end_to_end(const fs::path& work) {
  RunConfig cfg;
  cfg.activations = "unset";
  const auto t0 = Clock::now();
  const auto shift = generate_synthetic(suite_config(SyntheticAnomaly::mean_shift));
  const auto r = run_file_suite(shift, work / "mean_shift", cfg);

  const auto corr = generate_synthetic(suite_config(SyntheticAnomaly::correlation));
  const auto full = run_file_suite(corr, work / "correlation", cfg);
  const auto mem = in_memory(corr);
  AblationOptions opt;
  opt.rd_seeds = 1;
  opt.include_pca = false;
  const auto rows = run_ablation(mem.train, mem.test, mem.masks, mem.labels, corr.manifest, cfg, opt);
  const double sum = row(rows, "Layer 1+2+3").pixel_auroc;
  const double secs = since(t0);
  const bool pass = r.pixel > 0.95 && r.pro > 0.85 && full.pixel > sum && secs < 60.0;
  report("synthetic-end-to-end", pass,
         fmt("mean-shift pixel AUROC %.4f (> 0.95), PRO %.4f (> 0.85); correlation full %.4f > sum %.4f",
             r.pixel, r.pro, full.pixel, sum),
         secs);
}

void scalability(const fs::path& work) {
  const auto t0 = Clock::now();
  auto cfg_small = suite_config(SyntheticAnomaly::mean_shift);
  cfg_small.n_train = 200;
  const auto ds = generate_synthetic(cfg_small);
  const auto mem = in_memory(ds);
  RunConfig cfg;
  cfg.activations = "unset";
  const std::vector<ActivationSet> train20(mem.train.begin(), mem.train.begin() + 20);
  const auto m20 = fit_model(train20, ds.manifest, cfg);
  const auto m200 = fit_model(mem.train, ds.manifest, cfg);
  save_model(m20, work / "n20.padim");
  save_model(m200, work / "n200.padim");
  const auto bytes20 = fs::file_size(work / "n20.padim"), bytes200 = fs::file_size(work / "n200.padim");

  // Interleaved rounds so drift on a shared machine hits both models alike.
  const std::size_t map_size = ds.manifest.input_size;
  auto time_model = [&](const PadimModel& m) {
    const auto s = Clock::now();
    float sink = 0.0f;
    for (const auto& a : mem.test) sink += score_activations(m, a, map_size, kDefaultSigma).anomaly.image_score;
    if (!std::isfinite(sink)) throw NumericError("non-finite score");
    return since(s) / static_cast<double>(mem.test.size());
  };
  time_model(m20);
  std::vector<double> t20, t200;
  for (int round = 0; round < 15; ++round) {
    if (round % 2 == 0) {
      t20.push_back(time_model(m20));
      t200.push_back(time_model(m200));
    } else {
      t200.push_back(time_model(m200));
      t20.push_back(time_model(m20));
    }
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double a = median(t20), b = median(t200);
  const double ratio = b / a;
  report("scalability", ratio > 0.9 && ratio < 1.1 && bytes20 == bytes200,
         fmt("median ms/image N=20 %.3f, N=200 %.3f (ratio %.3f in (0.9, 1.1)); model bytes %.0f",
             1e3 * a, 1e3 * b, ratio, static_cast<double>(bytes20)) +
             (bytes20 == bytes200 ? " both" : " vs " + std::to_string(bytes200)),
         since(t0));
}

void reduction() {
  const auto t0 = Clock::now();
  RunConfig cfg;
  cfg.activations = "unset";
  // Bit-exact identity at d' = D.
  const auto ds = generate_synthetic(suite_config(SyntheticAnomaly::mean_shift));
  const auto mem = in_memory(ds);
  auto rd = cfg;
  rd.reduction = ReductionKind::random;
  rd.reduced_dim = ds.manifest.total_channels();
  rd.seed = 99;
  const auto full = fit_model(mem.train, ds.manifest, cfg);
  const auto same = fit_model(mem.train, ds.manifest, rd);
  bool identical = full.mean == same.mean && full.cov_factor == same.cov_factor;
  for (const auto& a : mem.test) {
    const auto x = score_activations(full, a, ds.manifest.input_size, kDefaultSigma);
    const auto y = score_activations(same, a, ds.manifest.input_size, kDefaultSigma);
    identical = identical && x.distances == y.distances && x.anomaly.map == y.anomaly.map;
  }

  // Rd at D/4, averaged over seeds, against the full model on both suites.
  AblationOptions opt;
  opt.rd_seeds = 10;
  opt.include_pca = false;
  double worst_loss = 0.0;
  std::string detail;
  for (auto kind : {SyntheticAnomaly::mean_shift, SyntheticAnomaly::correlation}) {
    const auto suite = kind == SyntheticAnomaly::mean_shift ? ds : generate_synthetic(suite_config(kind));
    const auto m = kind == SyntheticAnomaly::mean_shift ? mem : in_memory(suite);
    const auto rows = run_ablation(m.train, m.test, m.masks, m.labels, suite.manifest, cfg, opt);
    const double loss = 100.0 * (row(rows, "PaDiM").pixel_auroc - row(rows, "Rd").pixel_auroc);
    worst_loss = std::max(worst_loss, loss);
    detail += std::string(kind == SyntheticAnomaly::mean_shift ? "mean-shift" : "correlation") +
              fmt(" Rd D/4 loss %.2f pts; ", loss);
  }
  report("reduction", identical && worst_loss < 2.0,
         std::string("d'=D ") + (identical ? "bit-exact" : "DIFFERS") + "; " + detail + "(< 2 pts)", since(t0));
}

void mvtec() {
  const char* env = std::getenv("PADIM_MVTEC_DIR");
  const fs::path backbones = fs::path(PADIM_SOURCE_DIR) / "backbones";
  if (!env || !*env || !fs::is_directory(env)) {
    skip("mvtec-wr50-rd550", "set PADIM_MVTEC_DIR to an MVTec AD root to run");
    return;
  }
  if (!fs::exists(backbones / "wr50" / "model.onnx")) {
    skip("mvtec-wr50-rd550", "backbones/wr50/model.onnx missing; run tools/export_backbone.py wr50 backbones/wr50");
    return;
  }
  const auto t0 = Clock::now();
  RunConfig cfg;
  cfg.backbone = "wr50";
  cfg.backbone_root = backbones;
  cfg.reduction = ReductionKind::random;
  cfg.reduced_dim = 550;
  const auto source = make_source(cfg);
  double pix_sum = 0, img_sum = 0, carpet = -1;
  std::size_t n = 0;
  for (const auto& name : list_classes(env)) {
    const auto index = scan_dataset(fs::path(env) / name);
    const auto model = fit_model(*source, index.train, cfg);
    const auto r = evaluate(model, *source, index, cfg.sigma);
    std::printf("      %-12s pixel %.1f image %.1f PRO %.1f\n", name.c_str(), 100 * r.pixel_roc.auc,
                100 * r.image_roc.auc, 100 * r.pro.pro_score);
    if (name == "carpet") carpet = 100 * r.pixel_roc.auc;
    pix_sum += 100 * r.pixel_roc.auc;
    img_sum += 100 * r.image_roc.auc;
    ++n;
  }
  const double pix = n ? pix_sum / n : 0, img = n ? img_sum / n : 0;
  const bool pass = n == 15 && std::fabs(carpet - 99.1) <= 0.5 && std::fabs(pix - 97.5) <= 1.0 &&
                    std::fabs(img - 95.3) <= 1.5;
  report("mvtec-wr50-rd550", pass,
         fmt("carpet pixel %.2f (99.1 +- 0.5), mean pixel %.2f (97.5 +- 1.0), mean image %.2f (95.3 +- 1.5)", carpet,
             pix, img),
         since(t0));
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "padim_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  struct Step {
    const char* name;
    void (*fn)(const fs::path&);
  };
  const Step steps[] = {
      {"covariance-oracle", [](const fs::path&) { covariance_oracle(); }},
      {"mahalanobis-oracle", [](const fs::path&) { mahalanobis_oracle(); }},
      {"chi-square", [](const fs::path&) { chi_square(); }},
      {"metric-oracles", [](const fs::path&) { metric_oracles(); }},
      {"synthetic-end-to-end", synthetic_end_to_end},
      {"scalability", scalability},
      {"reduction", [](const fs::path&) { reduction(); }},
      {"mvtec-wr50-rd550", [](const fs::path&) { mvtec(); }},
  };
  for (const auto& s : steps) {
    try {
      s.fn(work);
    } catch (const std::exception& e) {
      report(s.name, false, std::string("exception: ") + e.what(), 0.0);
    }
  }
  fs::remove_all(work);
  std::printf("%s (%d failed)\n", failures ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED", failures);
  return failures ? 1 : 0;
}
