#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <gtest/gtest.h>
#include <opencv2/core.hpp>

#include "railsynth/scene.hpp"

namespace railsynth::tu {

/// Fresh directory per test, removed afterwards.
class TempDir {
public:
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path_ = std::filesystem::temp_directory_path() /
                ("railsynth_" + std::string(info->test_suite_name()) + "_" + info->name() + "_" +
                 std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

/// 60x80 scene: uniform noise image, railway = lower-middle rectangle.
inline BaseScene small_scene(std::uint64_t seed = 1, Weather w = Weather::sunny, std::string id = "scene") {
    cv::Mat img(60, 80, CV_8UC3);
    cv::RNG rng(seed);
    rng.fill(img, cv::RNG::UNIFORM, 0, 256);
    cv::Mat mask = cv::Mat::zeros(60, 80, CV_8UC1);
    mask(cv::Rect(20, 20, 40, 40)).setTo(255);
    return {img, mask, w, std::move(id)};
}

inline ObjectCutout solid_cutout(int h, int w, cv::Scalar color = {0, 0, 255}) {
    ObjectCutout c;
    c.patch = cv::Mat(h, w, CV_8UC3, color);
    c.alpha = cv::Mat(h, w, CV_8UC1, cv::Scalar(255));
    c.category = Category::person;
    c.source_id = "solid";
    c.native_size = {w, h};
    return c;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline bool mats_equal(const cv::Mat& a, const cv::Mat& b) {
    return a.size() == b.size() && a.type() == b.type() && cv::countNonZero(cv::Mat(a != b).reshape(1)) == 0;
}

} // namespace railsynth::tu
