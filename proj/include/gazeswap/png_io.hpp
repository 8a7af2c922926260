#pragma once

#include <filesystem>

#include "gazeswap/image.hpp"

namespace gazeswap {

/// 8-bit PNG, RGB for 3-channel images and grayscale for 1-channel ones.
void write_png(const std::filesystem::path& path, const FaceImage& image);
FaceImage read_png(const std::filesystem::path& path);

/// Masks are stored as grayscale with 0 / 255.
void write_mask_png(const std::filesystem::path& path, const Mask& mask);
Mask read_mask_png(const std::filesystem::path& path);

}  // namespace gazeswap
