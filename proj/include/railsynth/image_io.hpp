#pragma once

#include <filesystem>

#include <opencv2/core.hpp>

namespace railsynth {

/// Reads a PNG (or any format OpenCV decodes) as CV_8UC3.
cv::Mat read_image(const std::filesystem::path& path);

/// Reads a 1-channel mask and thresholds it at 128 into {0, 255}.
cv::Mat read_mask(const std::filesystem::path& path);

/// Writes an 8-bit raster as PNG, creating parent directories. Throws IoError.
void write_png(const std::filesystem::path& path, const cv::Mat& raster);

} // namespace railsynth

#include <vector>

#include "railsynth/scene.hpp"

namespace railsynth {

/// Scene directory layout: `<dir>/image.png`, `<dir>/railway_mask.png` and
/// `<dir>/scene.json` ({"weather": "sunny" | "foggy" | "rainy"}). The
/// directory name is the scene id.
BaseScene load_scene(const std::filesystem::path& dir);

/// Every scene directory directly under `root`, sorted by name.
std::vector<BaseScene> load_scenes(const std::filesystem::path& root);

void write_scene(const std::filesystem::path& root, const BaseScene& scene);

} // namespace railsynth
