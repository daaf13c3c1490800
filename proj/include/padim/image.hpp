/**
 * @file image.hpp
 * @brief 8-bit images, PNG I/O and backbone input preprocessing.
 */
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "padim/tensor.hpp"

namespace padim {

/// Interleaved 8-bit RGB, row-major.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // size = 3 * width * height

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(3 * w * h, fill) {}

  std::uint8_t* px(std::size_t x, std::size_t y) { return &pixels[3 * (y * width + x)]; }
  const std::uint8_t* px(std::size_t x, std::size_t y) const { return &pixels[3 * (y * width + x)]; }
  bool operator==(const RgbImage&) const = default;
};

/// Single-channel 8-bit image; used for ground-truth masks.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

/// Any PNG color type is converted to RGB8. Throws DataError on decode failure.
RgbImage read_png_rgb(const std::filesystem::path& path);
/// Any PNG color type is converted to 8-bit gray.
GrayImage read_png_gray(const std::filesystem::path& path);
void write_png(const RgbImage& img, const std::filesystem::path& path);
void write_png(const GrayImage& img, const std::filesystem::path& path);

/// ImageNet statistics; the defaults shipped in the ResNet manifests.
inline constexpr std::array<float, 3> kImageNetMean{0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kImageNetStd{0.229f, 0.224f, 0.225f};

struct PreprocessConfig {
  std::size_t resize_to = 256;
  std::optional<std::size_t> crop_to = 224;  // center crop; nullopt = resize only
  std::array<float, 3> mean = kImageNetMean;
  std::array<float, 3> std = kImageNetStd;

  /// Side length of the tensor handed to the backbone.
  std::size_t output_size() const { return crop_to ? *crop_to : resize_to; }
  /// Throws ConfigError when crop_to > resize_to or a size is zero.
  void validate() const;
};

/// Bicubic resize, optional center crop, [0,1] scaling and per-channel
/// normalization. Returns [3, S, S].
TensorF32 preprocess_image(const RgbImage& img, const PreprocessConfig& cfg);

/// Nearest-neighbour resize + the same center crop, for masks aligned with
/// preprocess_image output. Result is binary {0, 255}.
GrayImage preprocess_mask(const GrayImage& mask, const PreprocessConfig& cfg);

/// Bicubic RGB resize to (w, h).
RgbImage resize_rgb(const RgbImage& img, std::size_t w, std::size_t h);
GrayImage resize_gray_nearest(const GrayImage& img, std::size_t w, std::size_t h);
RgbImage crop(const RgbImage& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h);
GrayImage crop(const GrayImage& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h);

}  // namespace padim
