#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <opencv2/core.hpp>

#include "railsynth/scene.hpp"

namespace railsynth {

using Rng = std::mt19937_64;

/// Round-half-up to an integer pixel count.
int round_pixels(double v);

/// Resizes `cutout` to height round(alpha * anchor_y + beta), keeping the
/// aspect ratio. The alpha mask is resampled nearest-neighbour and re-binarized.
/// Throws ObjectTooSmall below kMinObjectHeight.
ObjectCutout rescale_cutout(const ObjectCutout& cutout, int anchor_y, const RescaleParams& params);

/// Frame rectangle covered by `cutout_size` when its bottom-center sits on
/// `anchor`: left = x - w/2, bottom row = y.
cv::Rect footprint_rect(cv::Size cutout_size, cv::Point anchor);

struct PasteResult {
    cv::Mat image;
    cv::Mat visible_railway;
    cv::Mat footprint;
};

/// Hard alpha paste. Pixels outside the footprint are bit-equal to the scene.
/// With `feather` the image edge is softened; masks stay exact either way.
PasteResult paste(const BaseScene& scene, const ObjectCutout& cutout, cv::Point anchor, bool feather = false);

/// Convex polygon on a square canvas, vertices in canvas pixel coordinates.
struct PolygonSample {
    std::vector<cv::Point2d> vertices;
    cv::Size canvas;
    cv::Point texture_offset;
};

struct PolygonParams {
    double min_radius = 10.0;
    double max_radius = 28.0;
};

PolygonSample sample_convex_polygon(Rng& rng, const PolygonParams& params = {});

/// Pixel (x, y) belongs to the polygon when its center (x + 0.5, y + 0.5) is
/// inside or on the boundary.
cv::Mat rasterize_convex_polygon(const PolygonSample& polygon);

/// Fills `polygon` by tiling `texture`; tight-cropped cutout of category texture.
ObjectCutout textured_polygon(const cv::Mat& texture, const PolygonSample& polygon);

/// 3-8 vertex convex polygon filled with `texture` (at least 32x32).
ObjectCutout random_textured_polygon(const cv::Mat& texture, Rng& rng, const PolygonParams& params = {});

/// Pseudo frame pair: the same (already rescaled) cutout pasted at `anchor` and
/// at `anchor + shift` on the same scene.
CompositeSample generate_pair(const BaseScene& scene, const ObjectCutout& cutout, cv::Point anchor, Shift shift,
                              const ShiftRange& range = {}, std::uint64_t seed = 0, bool feather = false);

struct AugmentPolicy {
    double p_flip = 0.5;
    double p_dropout = 0.5;
    double p_brightness = 0.5;
};

/// Training-time augmentation: horizontal flip (frames and masks; sets
/// `hflipped`), coarse dropout (1-4 rectangles of at most 10% of the area,
/// filled with the per-channel mean) and brightness/contrast jitter
/// (scale in [0.8, 1.2], offset in [-20, 20]). Masks are only touched by flip.
CompositeSample augment(const CompositeSample& sample, Rng& rng, const AugmentPolicy& policy = {});

} // namespace railsynth
