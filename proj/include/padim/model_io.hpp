/**
 * @file model_io.hpp
 * @brief ".padim" model container.
 *
 * Layout (little-endian):
 *
 *     "PADM" | u32 version | u64 n_train | u64 header_len | header JSON
 *     | mean f32 [H,W,D] | cov_factor f32 [H,W,D,D]
 *     | (pca only) projection f32 [D',D_full] | pca mean f32 [D_full]
 *
 * The header JSON carries the grid shape, epsilon, backbone manifest,
 * preprocessing and reduction (random indices inline). n_train sits in the
 * fixed-width prologue so the file size depends only on H, W, D and the
 * configuration, never on the training-set size.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "padim/gaussian.hpp"

namespace padim {

inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> encode_model(const PadimModel& model);
/// Throws DataError on bad magic, unsupported version or size mismatches.
PadimModel decode_model(std::span<const std::uint8_t> bytes);

void save_model(const PadimModel& model, const std::filesystem::path& path);
PadimModel load_model(const std::filesystem::path& path);

}  // namespace padim
