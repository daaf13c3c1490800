#include "padim/tensor.hpp"

#include <fstream>
#include <limits>
#include <string>

#include "padim/binary_io.hpp"
#include "padim/error.hpp"

namespace padim {

namespace {

constexpr char kMagic[4] = {'P', 'F', 'T', '1'};
// Guards the header against absurd values before any allocation.
constexpr std::uint32_t kMaxDims = 16;

}  // namespace

namespace detail {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  if (size < 0) throw DataError("cannot read file: " + path);
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  if (!bytes.empty() && !in.read(reinterpret_cast<char*>(bytes.data()), size)) {
    throw DataError("cannot read file: " + path);
  }
  return bytes;
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open file for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace detail

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

TensorF32::TensorF32(Shape shape, float fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw DataError("tensor shape entries must be >= 1");
  }
  if (shape_.empty()) throw DataError("tensor must have at least one dimension");
  data_.assign(shape_numel(shape_), fill);
}

TensorF32::TensorF32(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw DataError("tensor must have at least one dimension");
  for (auto d : shape_) {
    if (d == 0) throw DataError("tensor shape entries must be >= 1");
  }
  if (shape_numel(shape_) != data_.size()) throw DataError("payload length mismatch");
}

TensorF32 TensorF32::reshaped(Shape shape) const { return TensorF32(std::move(shape), data_); }

bool TensorF32::operator==(const TensorF32& other) const {
  if (shape_ != other.shape_ || data_.size() != other.data_.size()) return false;
  // Bitwise comparison so NaN payloads and signed zeros round-trip exactly.
  return data_.empty() ||
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

std::vector<std::uint8_t> encode_tensor(const TensorF32& t) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 8 * t.ndim() + 4 * t.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  detail::put_u32(out, static_cast<std::uint32_t>(t.ndim()));
  for (auto d : t.shape()) detail::put_u64(out, d);
  detail::put_f32s(out, t.values());
  return out;
}

TensorF32 decode_tensor(std::span<const std::uint8_t> bytes) {
  detail::ByteReader reader(bytes);
  auto magic = reader.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw DataError("bad magic: not a PFT1 tensor");
  const auto ndim = reader.u32("ndim");
  if (ndim == 0 || ndim > kMaxDims) throw DataError("bad tensor header: ndim " + std::to_string(ndim));
  Shape shape(ndim);
  std::size_t numel = 1;
  for (auto& d : shape) {
    const auto v = reader.u64("dims");
    if (v == 0) throw DataError("bad tensor header: zero dimension");
    if (numel > std::numeric_limits<std::size_t>::max() / 4 / v) throw DataError("bad tensor header: shape overflow");
    d = static_cast<std::size_t>(v);
    numel *= d;
  }
  if (reader.remaining() != numel * 4) {
    throw DataError("payload length mismatch: expected " + std::to_string(numel * 4) + " bytes, found " +
                    std::to_string(reader.remaining()));
  }
  std::vector<float> data(numel);
  reader.f32s(data, "payload");
  return TensorF32(std::move(shape), std::move(data));
}

TensorF32 read_tensor(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path.string());
  try {
    return decode_tensor(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_tensor(const TensorF32& t, const std::filesystem::path& path) {
  detail::write_file_bytes(path.string(), encode_tensor(t));
}

}  // namespace padim
