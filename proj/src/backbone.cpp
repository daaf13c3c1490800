#include "padim/backbone.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "padim/error.hpp"
#include "padim/onnx.hpp"

namespace padim {

using nlohmann::json;

std::size_t BackboneManifest::total_channels() const {
  std::size_t c = 0;
  for (const auto& t : taps) c += t.channels;
  return c;
}

void BackboneManifest::validate() const {
  if (input_size == 0) throw DataError("manifest: input_size must be >= 1");
  if (taps.empty()) throw DataError("manifest: no tap points");
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const auto& t = taps[i];
    if (t.name.empty() || t.channels == 0 || t.height == 0 || t.width == 0) {
      throw DataError("manifest: degenerate tap point '" + t.name + "'");
    }
    if (i > 0 && t.height * t.width > taps[0].height * taps[0].width) {
      throw DataError("manifest: taps must be ordered by decreasing resolution ('" + t.name + "')");
    }
    if (i > 0 && t.height * t.width > taps[i - 1].height * taps[i - 1].width) {
      throw DataError("manifest: taps must be ordered by decreasing resolution ('" + t.name + "')");
    }
  }
  for (float s : std) {
    if (!(s > 0.0f)) throw DataError("manifest: std entries must be > 0");
  }
}

std::string BackboneManifest::to_json() const {
  json j;
  j["name"] = name;
  j["input_size"] = input_size;
  j["input_name"] = input_name;
  j["model"] = model_file;
  j["mean"] = mean;
  j["std"] = std;
  j["taps"] = json::array();
  for (const auto& t : taps) j["taps"].push_back({{"name", t.name}, {"shape", {t.channels, t.height, t.width}}});
  return j.dump(2);
}

BackboneManifest parse_manifest(std::string_view json_text) {
  BackboneManifest m;
  try {
    const auto j = json::parse(json_text);
    m.name = j.value("name", std::string("backbone"));
    m.input_size = j.at("input_size").get<std::size_t>();
    m.input_name = j.value("input_name", std::string("input"));
    m.model_file = j.value("model", std::string("model.onnx"));
    if (j.contains("mean")) m.mean = j.at("mean").get<std::array<float, 3>>();
    if (j.contains("std")) m.std = j.at("std").get<std::array<float, 3>>();
    for (const auto& t : j.at("taps")) {
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 3) throw DataError("manifest: tap shape must be [C, H, W]");
      m.taps.push_back({t.at("name").get<std::string>(), shape[0], shape[1], shape[2]});
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

BackboneManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

void write_manifest(const BackboneManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest: " + path.string());
  out << m.to_json() << "\n";
}

BackboneManifest builtin_manifest(std::string_view name) {
  BackboneManifest m;
  m.input_size = 224;
  if (name == "r18") {
    m.name = "resnet18";
    m.taps = {{"layer1", 64, 56, 56}, {"layer2", 128, 28, 28}, {"layer3", 256, 14, 14}};
  } else if (name == "wr50") {
    m.name = "wide_resnet50_2";
    m.taps = {{"layer1", 256, 56, 56}, {"layer2", 512, 28, 28}, {"layer3", 1024, 14, 14}};
  } else {
    throw ConfigError("unknown builtin backbone: " + std::string(name));
  }
  return m;
}

std::size_t ActivationSet::batch() const { return taps.empty() ? 0 : taps.front().dim(0); }

void ActivationSet::check_against(const BackboneManifest& m) const {
  if (taps.size() != m.taps.size()) {
    throw DataError("dimension mismatch: expected " + std::to_string(m.taps.size()) + " taps, got " +
                    std::to_string(taps.size()));
  }
  const std::size_t b = batch();
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const auto& t = taps[i];
    const auto& tp = m.taps[i];
    if (t.ndim() != 4 || t.dim(0) != b || t.dim(1) != tp.channels || t.dim(2) != tp.height || t.dim(3) != tp.width) {
      throw DataError("dimension mismatch for tap '" + tp.name + "'");
    }
  }
}

ActivationSet ActivationSet::image(std::size_t b) const {
  ActivationSet out;
  for (const auto& t : taps) {
    if (b >= t.dim(0)) throw DataError("activation batch index out of range");
    const std::size_t per = t.size() / t.dim(0);
    std::vector<float> data(t.data() + b * per, t.data() + (b + 1) * per);
    out.taps.emplace_back(Shape{1, t.dim(1), t.dim(2), t.dim(3)}, std::move(data));
  }
  return out;
}

ActivationSet concat_batches(const std::vector<ActivationSet>& parts) {
  if (parts.empty()) throw DataError("concat_batches: no inputs");
  ActivationSet out;
  const std::size_t ntaps = parts.front().taps.size();
  for (std::size_t l = 0; l < ntaps; ++l) {
    std::size_t b = 0;
    std::vector<float> data;
    const auto& ref = parts.front().taps.at(l);
    for (const auto& p : parts) {
      if (p.taps.size() != ntaps) throw DataError("inconsistent tap counts across batches");
      const auto& t = p.taps[l];
      if (t.ndim() != 4 || t.dim(1) != ref.dim(1) || t.dim(2) != ref.dim(2) || t.dim(3) != ref.dim(3)) {
        throw DataError("dimension mismatch across batches");
      }
      b += t.dim(0);
      data.insert(data.end(), t.values().begin(), t.values().end());
    }
    out.taps.emplace_back(Shape{b, ref.dim(1), ref.dim(2), ref.dim(3)}, std::move(data));
  }
  return out;
}

BackbonePackage BackbonePackage::load(const std::filesystem::path& dir) {
  auto manifest = read_manifest(dir / "manifest.json");
  const auto model_path = dir / manifest.model_file;
  return from_parts(std::move(manifest), model_path);
}

BackbonePackage BackbonePackage::from_parts(BackboneManifest manifest, const std::filesystem::path& model_path) {
  manifest.validate();
  auto graph = onnx::load_model(model_path.string());
  std::vector<std::string> names;
  for (const auto& t : manifest.taps) names.push_back(t.name);
  BackbonePackage pkg;
  pkg.program_ = std::make_shared<const onnx::Program>(std::move(graph), manifest.input_name, names);
  pkg.manifest_ = std::move(manifest);

  // Probe with a zero image; declared shapes must match what the graph produces.
  const std::size_t s = pkg.manifest_.input_size;
  const auto outputs = pkg.program_->run(TensorF32({1, 3, s, s}));
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& t = pkg.manifest_.taps[i];
    const auto& o = outputs[i];
    if (o.ndim() != 4 || o.dim(1) != t.channels || o.dim(2) != t.height || o.dim(3) != t.width) {
      std::string got;
      for (auto d : o.shape()) got += std::to_string(d) + " ";
      throw DataError("shape mismatch for tap '" + t.name + "': probe produced [ " + got + "]");
    }
  }
  return pkg;
}

ActivationSet BackbonePackage::extract(const TensorF32& batch) const {
  const std::size_t s = manifest_.input_size;
  if (batch.ndim() != 4 || batch.dim(1) != 3 || batch.dim(2) != s || batch.dim(3) != s) {
    throw DataError("wrong input size: backbone expects [B, 3, " + std::to_string(s) + ", " + std::to_string(s) + "]");
  }
  const std::size_t b = batch.dim(0);
  const std::size_t per = 3 * s * s;
  ActivationSet out;
  for (const auto& t : manifest_.taps) out.taps.emplace_back(Shape{b, t.channels, t.height, t.width});
  // One image at a time: results are independent of batch composition.
  for (std::size_t i = 0; i < b; ++i) {
    TensorF32 one({1, 3, s, s}, std::vector<float>(batch.data() + i * per, batch.data() + (i + 1) * per));
    std::vector<TensorF32> acts;
    try {
      acts = program_->run(one);
    } catch (const DataError& e) {
      throw NumericError(std::string("inference failure: ") + e.what());
    }
    for (std::size_t l = 0; l < acts.size(); ++l) {
      const std::size_t n = acts[l].size();
      for (float v : acts[l].values()) {
        if (!std::isfinite(v)) throw NumericError("inference failure: non-finite activation in " + manifest_.taps[l].name);
      }
      std::copy_n(acts[l].data(), n, out.taps[l].data() + i * n);
    }
  }
  return out;
}

ActivationSet read_activation_files(const std::filesystem::path& dir, const BackboneManifest& m) {
  ActivationSet out;
  for (const auto& tap : m.taps) {
    auto t = read_tensor(dir / (tap.name + ".pft"));
    if (t.ndim() == 3) t = t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)});
    if (t.ndim() != 4 || t.dim(0) != 1 || t.dim(1) != tap.channels || t.dim(2) != tap.height || t.dim(3) != tap.width) {
      throw DataError("dimension mismatch: " + (dir / (tap.name + ".pft")).string() + " does not match tap '" +
                      tap.name + "'");
    }
    out.taps.push_back(std::move(t));
  }
  return out;
}

void write_activation_files(const ActivationSet& acts, const std::filesystem::path& dir, const BackboneManifest& m) {
  acts.check_against(m);
  if (acts.batch() != 1) throw DataError("write_activation_files: expected a batch of one");
  std::filesystem::create_directories(dir);
  for (std::size_t l = 0; l < m.taps.size(); ++l) {
    const auto& t = acts.taps[l];
    write_tensor(t.reshaped({t.dim(1), t.dim(2), t.dim(3)}), dir / (m.taps[l].name + ".pft"));
  }
}

}  // namespace padim
