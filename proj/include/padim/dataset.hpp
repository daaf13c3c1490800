/**
 * @file dataset.hpp
 * @brief MVTec-AD style dataset trees and the randomly rotated/cropped variant.
 *
 * Layout of one class directory:
 *
 *     <class>/train/good/<item>
 *     <class>/test/<defect>/<item>            (defect "good" = normal)
 *     <class>/ground_truth/<defect>/<stem>_mask.png
 *
 * An item is either a PNG image or, in activation-file mode, a directory
 * holding one `<tap>.pft` per backbone tap.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "padim/image.hpp"
#include "padim/random.hpp"

namespace padim {

struct TestSample {
  std::filesystem::path path;
  std::string defect;
  bool anomalous = false;
  std::optional<std::filesystem::path> mask;
};

struct DatasetIndex {
  std::string class_name;
  std::filesystem::path root;
  std::vector<std::filesystem::path> train;
  std::vector<TestSample> test;

  std::string to_json() const;
};

/// Throws DataError on an empty train split or a missing mask.
DatasetIndex scan_dataset(const std::filesystem::path& class_root);
/// Subdirectories of root that contain train/good, sorted.
std::vector<std::string> list_classes(const std::filesystem::path& root);

struct RdTransform {
  double max_angle_deg = 10.0;
  std::size_t source_size = 256;
  std::size_t crop_size = 224;
  std::uint64_t seed = 0;
};

struct RdParams {
  double angle_deg = 0.0;
  std::size_t x0 = 0;
  std::size_t y0 = 0;
};

/// Angle ~ U(-max, +max), crop offsets uniform over [0, source - crop].
RdParams draw_rd_params(const RdTransform& t, Rng& rng);

/// Rotation about the image center; bicubic with reflected borders.
RgbImage rotate_bicubic(const RgbImage& img, double angle_deg);
/// Rotation about the image center; nearest neighbour, zero outside.
GrayImage rotate_nearest(const GrayImage& mask, double angle_deg);

/// Rotate then crop crop_size x crop_size at (x0, y0). The mask gets the same
/// geometry and is re-binarized at half intensity.
std::pair<RgbImage, std::optional<GrayImage>> apply_rd_transform(const RgbImage& img, const GrayImage* mask,
                                                                 const RdParams& params, std::size_t crop_size);

/// Writes a perturbed copy of the class under out/<class>/; each image is
/// resized to source_size first. Deterministic per seed.
DatasetIndex make_rd_dataset(const DatasetIndex& index, std::uint64_t seed, const std::filesystem::path& out,
                             RdTransform transform = {});

}  // namespace padim
