#pragma once

#include "amos/imgcore/image.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace amos::pipeline {

/// Decodes any format OpenCV reads (8/16-bit, 1/3/4 channels) to intensity in
/// [0, 255]. Empty on unreadable or corrupted files.
std::optional<GrayImage> load_gray(const std::filesystem::path& path);

/// Rounds and clamps to 8 bits.
std::vector<unsigned char> encode_png(const GrayImage& img);
void save_png(const std::filesystem::path& path, const GrayImage& img);

bool is_image_file(const std::filesystem::path& path);

}  // namespace amos::pipeline
