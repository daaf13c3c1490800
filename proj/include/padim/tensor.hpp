/**
 * @file tensor.hpp
 * @brief Row-major float tensor and the ".pft" container.
 *
 * On-disk layout: "PFT1" | u32 ndim | ndim x u64 dims | f32 payload,
 * all little-endian, no padding.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <vector>

namespace padim {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);

class TensorF32 {
 public:
  TensorF32() = default;
  explicit TensorF32(Shape shape, float fill = 0.0f);
  TensorF32(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // 2-D convenience accessors (row, col) for maps.
  float& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  /// Same data, new shape with equal element count.
  TensorF32 reshaped(Shape shape) const;

  bool operator==(const TensorF32& other) const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Throws DataError on bad magic, header or payload-length mismatch.
TensorF32 read_tensor(const std::filesystem::path& path);
/// Throws DataError on I/O failure.
void write_tensor(const TensorF32& t, const std::filesystem::path& path);

TensorF32 decode_tensor(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_tensor(const TensorF32& t);

}  // namespace padim
