#include "padim/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <string>

#include "padim/error.hpp"
#include "padim/resample.hpp"

namespace padim {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Decodes to 8-bit with the requested channel count (1 or 3).
std::vector<std::uint8_t> decode_png(const std::filesystem::path& path, int channels, std::size_t& width,
                                     std::size_t& height) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw DataError("cannot open image: " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError("decode failure: not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("decode failure: libpng init");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("decode failure: libpng init");
  }
  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("decode failure: corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  const bool is_gray = (color & PNG_COLOR_MASK_COLOR) == 0;
  if (channels == 3 && is_gray) png_set_gray_to_rgb(png);
  if (channels == 1 && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);

  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  if (width == 0 || height == 0) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("zero-size image: " + path.string());
  }
  const auto rowbytes = png_get_rowbytes(png, info);
  if (rowbytes != width * static_cast<std::size_t>(channels)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("decode failure: unexpected PNG layout: " + path.string());
  }
  pixels.resize(rowbytes * height);
  rows.resize(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = pixels.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return pixels;
}

void encode_png(const std::filesystem::path& path, const std::uint8_t* pixels, std::size_t width, std::size_t height,
                int channels) {
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw DataError("cannot open image for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("encode failure: libpng init");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("encode failure: libpng init");
  }
  std::vector<png_bytep> rows(height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("encode failure: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) {
    rows[y] = const_cast<png_bytep>(pixels + y * width * static_cast<std::size_t>(channels));
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

RgbImage read_png_rgb(const std::filesystem::path& path) {
  RgbImage img;
  img.pixels = decode_png(path, 3, img.width, img.height);
  return img;
}

GrayImage read_png_gray(const std::filesystem::path& path) {
  GrayImage img;
  img.pixels = decode_png(path, 1, img.width, img.height);
  return img;
}

void write_png(const RgbImage& img, const std::filesystem::path& path) {
  if (img.width == 0 || img.height == 0) throw DataError("write_png: zero-size image");
  encode_png(path, img.pixels.data(), img.width, img.height, 3);
}

void write_png(const GrayImage& img, const std::filesystem::path& path) {
  if (img.width == 0 || img.height == 0) throw DataError("write_png: zero-size image");
  encode_png(path, img.pixels.data(), img.width, img.height, 1);
}

void PreprocessConfig::validate() const {
  if (resize_to == 0) throw ConfigError("preprocess: resize size must be >= 1");
  if (crop_to && (*crop_to == 0 || *crop_to > resize_to)) {
    throw ConfigError("preprocess: crop size must be in [1, resize size]");
  }
  for (float s : std) {
    if (!(s > 0.0f)) throw ConfigError("preprocess: normalization std must be > 0");
  }
}

TensorF32 preprocess_image(const RgbImage& img, const PreprocessConfig& cfg) {
  cfg.validate();
  if (img.width == 0 || img.height == 0) throw DataError("preprocess: zero-size image");
  const std::size_t s = cfg.resize_to;
  const std::size_t out = cfg.output_size();
  const std::size_t offset = (s - out) / 2;

  std::vector<float> plane(img.width * img.height);
  std::vector<float> resized(s * s);
  TensorF32 result({3, out, out});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = img.pixels[3 * i + c] / 255.0f;
    resize_plane_bicubic(plane, img.height, img.width, resized, s, s);
    float* dst = result.data() + c * out * out;
    for (std::size_t y = 0; y < out; ++y) {
      for (std::size_t x = 0; x < out; ++x) {
        dst[y * out + x] = (resized[(y + offset) * s + (x + offset)] - cfg.mean[c]) / cfg.std[c];
      }
    }
  }
  return result;
}

GrayImage preprocess_mask(const GrayImage& mask, const PreprocessConfig& cfg) {
  cfg.validate();
  const std::size_t s = cfg.resize_to;
  const std::size_t out = cfg.output_size();
  const std::size_t offset = (s - out) / 2;
  GrayImage resized = resize_gray_nearest(mask, s, s);
  GrayImage cropped = crop(resized, offset, offset, out, out);
  for (auto& p : cropped.pixels) p = p >= 128 ? 255 : 0;
  return cropped;
}

RgbImage resize_rgb(const RgbImage& img, std::size_t w, std::size_t h) {
  if (img.width == 0 || img.height == 0 || w == 0 || h == 0) throw DataError("resize: zero-size image");
  RgbImage out(w, h);
  std::vector<float> plane(img.width * img.height);
  std::vector<float> resized(w * h);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = img.pixels[3 * i + c];
    resize_plane_bicubic(plane, img.height, img.width, resized, h, w);
    for (std::size_t i = 0; i < resized.size(); ++i) out.pixels[3 * i + c] = to_u8(resized[i]);
  }
  return out;
}

GrayImage resize_gray_nearest(const GrayImage& img, std::size_t w, std::size_t h) {
  if (img.width == 0 || img.height == 0 || w == 0 || h == 0) throw DataError("resize: zero-size image");
  GrayImage out(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t sy = std::min(img.height - 1, (2 * y + 1) * img.height / (2 * h));
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sx = std::min(img.width - 1, (2 * x + 1) * img.width / (2 * w));
      out.at(x, y) = img.at(sx, sy);
    }
  }
  return out;
}

RgbImage crop(const RgbImage& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  if (x0 + w > img.width || y0 + h > img.height) throw DataError("crop: window outside image");
  RgbImage out(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    std::copy_n(img.px(x0, y0 + y), 3 * w, out.px(0, y));
  }
  return out;
}

GrayImage crop(const GrayImage& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  if (x0 + w > img.width || y0 + h > img.height) throw DataError("crop: window outside image");
  GrayImage out(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    std::copy_n(&img.pixels[(y0 + y) * img.width + x0], w, &out.pixels[y * w]);
  }
  return out;
}

}  // namespace padim
