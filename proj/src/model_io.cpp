#include "padim/model_io.hpp"

#include <algorithm>

#include "json.hpp"
#include "padim/binary_io.hpp"
#include "padim/error.hpp"

namespace padim {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'P', 'A', 'D', 'M'};

json preprocess_to_json(const PreprocessConfig& p) {
  json j;
  j["resize"] = p.resize_to;
  j["crop"] = p.crop_to ? json(*p.crop_to) : json(nullptr);
  j["mean"] = p.mean;
  j["std"] = p.std;
  return j;
}

PreprocessConfig preprocess_from_json(const json& j) {
  PreprocessConfig p;
  p.resize_to = j.at("resize").get<std::size_t>();
  if (j.at("crop").is_null()) p.crop_to.reset();
  else p.crop_to = j.at("crop").get<std::size_t>();
  p.mean = j.at("mean").get<std::array<float, 3>>();
  p.std = j.at("std").get<std::array<float, 3>>();
  return p;
}

}  // namespace

std::vector<std::uint8_t> encode_model(const PadimModel& model) {
  if (model.mean.size() != model.positions() * model.dim ||
      model.cov_factor.size() != model.positions() * model.dim * model.dim) {
    throw DataError("encode_model: parameter sizes do not match the grid");
  }
  model.reduction.validate();
  json h;
  h["height"] = model.height;
  h["width"] = model.width;
  h["dim"] = model.dim;
  h["epsilon"] = model.epsilon;
  h["backbone_id"] = model.backbone_id;
  h["backbone"] = json::parse(model.backbone.to_json());
  h["taps_used"] = model.taps_used;
  h["preprocess"] = preprocess_to_json(model.preprocess);
  json r;
  r["kind"] = to_string(model.reduction.kind);
  r["full_dim"] = model.reduction.full_dim;
  r["target_dim"] = model.reduction.target_dim;
  r["seed"] = model.reduction.seed;
  if (model.reduction.kind == ReductionKind::random) r["indices"] = model.reduction.indices;
  if (model.reduction.kind == ReductionKind::pca) r["captured_variance"] = model.reduction.captured_variance;
  h["reduction"] = r;
  const std::string header = h.dump();

  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  detail::put_u32(out, kModelFormatVersion);
  detail::put_u64(out, model.n_train);
  detail::put_u64(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  detail::put_f32s(out, model.mean.values());
  detail::put_f32s(out, model.cov_factor.values());
  if (model.reduction.kind == ReductionKind::pca) {
    detail::put_f32s(out, model.reduction.projection.values());
    detail::put_f32s(out, model.reduction.mean.values());
  }
  return out;
}

PadimModel decode_model(std::span<const std::uint8_t> bytes) {
  detail::ByteReader reader(bytes);
  auto magic = reader.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw DataError("bad magic: not a PADM model file");
  const auto version = reader.u32("version");
  if (version != kModelFormatVersion) throw DataError("unsupported model version " + std::to_string(version));
  PadimModel m;
  m.n_train = reader.u64("n_train");
  const auto header_len = reader.u64("header length");
  if (header_len > reader.remaining()) throw DataError("model header length exceeds file size");
  auto header_bytes = reader.take(static_cast<std::size_t>(header_len), "header");
  try {
    const auto h = json::parse(header_bytes.begin(), header_bytes.end());
    m.height = h.at("height").get<std::size_t>();
    m.width = h.at("width").get<std::size_t>();
    m.dim = h.at("dim").get<std::size_t>();
    m.epsilon = h.at("epsilon").get<double>();
    m.backbone_id = h.at("backbone_id").get<std::string>();
    m.backbone = parse_manifest(h.at("backbone").dump());
    m.taps_used = h.at("taps_used").get<std::vector<std::size_t>>();
    m.preprocess = preprocess_from_json(h.at("preprocess"));
    const auto& r = h.at("reduction");
    m.reduction.kind = reduction_kind_from_string(r.at("kind").get<std::string>());
    m.reduction.full_dim = r.at("full_dim").get<std::size_t>();
    m.reduction.target_dim = r.at("target_dim").get<std::size_t>();
    m.reduction.seed = r.at("seed").get<std::uint64_t>();
    if (m.reduction.kind == ReductionKind::random) m.reduction.indices = r.at("indices").get<std::vector<std::size_t>>();
    if (m.reduction.kind == ReductionKind::pca) m.reduction.captured_variance = r.at("captured_variance").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("corrupt model header: ") + e.what());
  }
  if (m.height == 0 || m.width == 0 || m.dim == 0) throw DataError("model header: empty grid");
  if (!(m.epsilon > 0.0)) throw DataError("model header: epsilon must be > 0");
  if (m.dim != m.reduction.output_dim()) throw DataError("model header: dim does not match reduction");
  for (auto t : m.taps_used) {
    if (t >= m.backbone.taps.size()) throw DataError("model header: tap index out of range");
  }

  const std::size_t p = m.height * m.width;
  const std::size_t expected = 4 * (p * m.dim + p * m.dim * m.dim +
                                    (m.reduction.kind == ReductionKind::pca
                                         ? m.reduction.target_dim * m.reduction.full_dim + m.reduction.full_dim
                                         : 0));
  if (reader.remaining() != expected) throw DataError("payload length mismatch in model file");
  m.mean = TensorF32({m.height, m.width, m.dim});
  m.cov_factor = TensorF32({m.height, m.width, m.dim, m.dim});
  reader.f32s(m.mean.values(), "mean");
  reader.f32s(m.cov_factor.values(), "cov_factor");
  if (m.reduction.kind == ReductionKind::pca) {
    m.reduction.projection = TensorF32({m.reduction.target_dim, m.reduction.full_dim});
    m.reduction.mean = TensorF32({m.reduction.full_dim});
    reader.f32s(m.reduction.projection.values(), "pca projection");
    reader.f32s(m.reduction.mean.values(), "pca mean");
  }
  m.reduction.validate();
  return m;
}

void save_model(const PadimModel& model, const std::filesystem::path& path) {
  detail::write_file_bytes(path.string(), encode_model(model));
}

PadimModel load_model(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path.string());
  try {
    return decode_model(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace padim
