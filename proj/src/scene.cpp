#include "railsynth/scene.hpp"

#include <cmath>

#include <opencv2/imgproc.hpp>

namespace railsynth {

std::string_view to_string(Weather w) {
    switch (w) {
    case Weather::sunny: return "sunny";
    case Weather::foggy: return "foggy";
    case Weather::rainy: return "rainy";
    }
    return "unknown";
}

std::string_view to_string(Category c) {
    switch (c) {
    case Category::person: return "person";
    case Category::animal: return "animal";
    case Category::texture: return "texture";
    }
    return "unknown";
}

std::optional<Weather> parse_weather(std::string_view s) {
    for (Weather w : kAllWeathers)
        if (to_string(w) == s) return w;
    return std::nullopt;
}

std::optional<Category> parse_category(std::string_view s) {
    for (Category c : kAllCategories)
        if (to_string(c) == s) return c;
    return std::nullopt;
}

cv::Mat binarize(const cv::Mat& mask, int threshold) {
    CV_Assert(mask.channels() == 1);
    cv::Mat src = mask;
    if (mask.depth() != CV_8U) mask.convertTo(src, CV_8U);
    cv::Mat out;
    cv::threshold(src, out, threshold - 1, 255, cv::THRESH_BINARY);
    return out;
}

cv::Rect nonzero_bounds(const cv::Mat& mask) {
    if (mask.empty() || cv::countNonZero(mask) == 0) return {};
    return cv::boundingRect(mask);
}

std::vector<std::string> validate_scene(const BaseScene& scene) {
    std::vector<std::string> violations;
    if (scene.image.empty() || scene.image.type() != CV_8UC3)
        violations.emplace_back("image must be a nonempty 3-channel 8-bit raster");
    if (scene.railway_mask.empty() || scene.railway_mask.type() != CV_8UC1) {
        violations.emplace_back("railway_mask must be a nonempty 1-channel 8-bit raster");
        return violations;
    }
    if (scene.image.size() != scene.railway_mask.size()) violations.emplace_back("shape mismatch");
    const int on = cv::countNonZero(scene.railway_mask);
    if (on == 0)
        violations.emplace_back("railway_mask empty");
    else if (on == static_cast<int>(scene.railway_mask.total()))
        violations.emplace_back("railway_mask full");
    if (!parse_weather(to_string(scene.weather))) violations.emplace_back("weather not in {sunny, foggy, rainy}");
    return violations;
}

std::vector<std::string> validate_cutout(const ObjectCutout& cutout) {
    std::vector<std::string> violations;
    if (cutout.patch.empty() || cutout.alpha.empty()) {
        violations.emplace_back("cutout empty");
        return violations;
    }
    if (cutout.patch.size() != cutout.alpha.size()) violations.emplace_back("patch/alpha shape mismatch");
    if (cv::countNonZero(cutout.alpha) == 0) {
        violations.emplace_back("alpha empty");
        return violations;
    }
    if (nonzero_bounds(cutout.alpha) != cv::Rect(0, 0, cutout.alpha.cols, cutout.alpha.rows))
        violations.emplace_back("cutout not tight-cropped");
    return violations;
}

std::vector<std::string> validate_rescale(const RescaleParams& params, int min_anchor_y) {
    std::vector<std::string> violations;
    if (!(params.alpha > 0.0)) violations.emplace_back("rescale.alpha must be > 0");
    if (!(params.beta >= 0.0)) violations.emplace_back("rescale.beta must be >= 0");
    // alpha > 0 makes the smallest legal anchor row the binding case.
    const double h = std::floor(params.alpha * std::max(0, min_anchor_y) + params.beta + 0.5);
    if (!(h >= kMinObjectHeight))
        violations.emplace_back("rescale yields objects below " + std::to_string(kMinObjectHeight) + " px");
    return violations;
}

} // namespace railsynth
