#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

namespace railsynth {

enum class Weather { sunny, foggy, rainy };
enum class Category { person, animal, texture };

inline constexpr Weather kAllWeathers[] = {Weather::sunny, Weather::foggy, Weather::rainy};
inline constexpr Category kAllCategories[] = {Category::person, Category::animal, Category::texture};

std::string_view to_string(Weather w);
std::string_view to_string(Category c);
std::optional<Weather> parse_weather(std::string_view s);
std::optional<Category> parse_category(std::string_view s);

/// Binary rasters are CV_8UC1 with values {0, 255}; any nonzero pixel is "on".
/// Images are CV_8UC3 in OpenCV's BGR order.
cv::Mat binarize(const cv::Mat& mask, int threshold = 128);

/// Obstacle-free canvas: background image plus the railway region of interest.
struct BaseScene {
    cv::Mat image;
    cv::Mat railway_mask;
    Weather weather = Weather::sunny;
    std::string scene_id;
};

/// Tight-cropped paste-able object.
struct ObjectCutout {
    cv::Mat patch;
    cv::Mat alpha;
    Category category = Category::person;
    std::string source_id;
    cv::Size native_size;
};

/// Depth-aware object height `h = alpha * anchor_y + beta` in pixels.
struct RescaleParams {
    double alpha = 0.6;
    double beta = 30.0;
};

inline constexpr int kMinObjectHeight = 8;

struct Shift {
    int dx = 0;
    int dy = 0;
    friend bool operator==(const Shift&, const Shift&) = default;
};

/// Inclusive bounds for each shift component.
struct ShiftRange {
    int lo = 5;
    int hi = 10;
    bool contains(const Shift& s) const { return s.dx >= lo && s.dx <= hi && s.dy >= lo && s.dy <= hi; }
};

/// `anchor` is the bottom-center pixel of the cutout in frame coordinates.
struct PlacementSpec {
    cv::Point anchor;
    Shift shift;
    RescaleParams rescale;
};

/// One training unit: a pseudo frame pair with its visible-railway masks.
struct CompositeSample {
    cv::Mat frame_t;
    cv::Mat frame_t1;
    cv::Mat mask_t;
    cv::Mat mask_t1;
    PlacementSpec placement;
    std::string scene_id;
    std::uint64_t seed = 0;
    Weather weather = Weather::sunny;
    Category category = Category::person;
    /// Set when the sample was mirrored horizontally; flow computed on the
    /// unmirrored frames must be mirrored and have dx negated.
    bool hflipped = false;
};

/// Returns one message per violated BaseScene invariant; empty when valid.
std::vector<std::string> validate_scene(const BaseScene& scene);

std::vector<std::string> validate_cutout(const ObjectCutout& cutout);

/// Checks alpha > 0, beta >= 0 and that every anchor row in
/// [min_anchor_y, max_anchor_y] yields an object at least kMinObjectHeight tall.
std::vector<std::string> validate_rescale(const RescaleParams& params, int min_anchor_y = 0);

/// Bounding rectangle of the nonzero pixels; empty rect for an empty mask.
cv::Rect nonzero_bounds(const cv::Mat& mask);

} // namespace railsynth
