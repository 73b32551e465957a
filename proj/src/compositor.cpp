#include "railsynth/compositor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <opencv2/imgproc.hpp>

#include "railsynth/errors.hpp"
#include "railsynth/extraction.hpp"

namespace railsynth {

int round_pixels(double v) {
    // The epsilon absorbs products such as 0.6 * 50 landing just below an integer.
    return static_cast<int>(std::floor(v + 0.5 + 1e-9));
}

ObjectCutout rescale_cutout(const ObjectCutout& cutout, int anchor_y, const RescaleParams& params) {
    if (anchor_y < 0) throw ValidationError("rescale_cutout: anchor_y must be >= 0");
    if (!(params.alpha > 0.0) || !(params.beta >= 0.0))
        throw ValidationError("rescale_cutout: need alpha > 0 and beta >= 0");
    if (cutout.patch.empty() || cutout.patch.size() != cutout.alpha.size())
        throw ValidationError("rescale_cutout: malformed cutout " + cutout.source_id);

    const int h = round_pixels(params.alpha * anchor_y + params.beta);
    if (h < kMinObjectHeight)
        throw ObjectTooSmall("rescaled height " + std::to_string(h) + " px is below the " +
                             std::to_string(kMinObjectHeight) + " px minimum");
    const int w = std::max(1, round_pixels(static_cast<double>(h) / cutout.patch.rows * cutout.patch.cols));

    ObjectCutout out;
    const int interp = (h < cutout.patch.rows) ? cv::INTER_AREA : cv::INTER_LINEAR;
    // Resample colour premultiplied by alpha so background pixels of the source
    // image never bleed into the object's edge.
    cv::Mat a32, a3, premult, a_small, p_small;
    cutout.alpha.convertTo(a32, CV_32F, 1.0 / 255.0);
    cv::merge(std::vector<cv::Mat>{a32, a32, a32}, a3);
    cutout.patch.convertTo(premult, CV_32FC3);
    premult = premult.mul(a3);
    cv::resize(premult, p_small, {w, h}, 0, 0, interp);
    cv::resize(a32, a_small, {w, h}, 0, 0, interp);
    cv::resize(cutout.patch, out.patch, {w, h}, 0, 0, interp);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float a = a_small.at<float>(y, x);
            if (a < 1e-3f) continue;
            const cv::Vec3f c = p_small.at<cv::Vec3f>(y, x) / a;
            out.patch.at<cv::Vec3b>(y, x) = {cv::saturate_cast<std::uint8_t>(c[0]), cv::saturate_cast<std::uint8_t>(c[1]),
                                             cv::saturate_cast<std::uint8_t>(c[2])};
        }
    cv::Mat alpha;
    cv::resize(cutout.alpha, alpha, {w, h}, 0, 0, cv::INTER_NEAREST);
    out.alpha = binarize(alpha);
    if (cv::countNonZero(out.alpha) == 0) {
        // Thin structures can vanish under nearest sampling; keep the object visible.
        cv::Mat area;
        cv::resize(cutout.alpha, area, {w, h}, 0, 0, cv::INTER_AREA);
        out.alpha = binarize(area, 1);
    }
    out.category = cutout.category;
    out.source_id = cutout.source_id;
    out.native_size = cutout.native_size;
    return out;
}

cv::Rect footprint_rect(cv::Size cutout_size, cv::Point anchor) {
    return {anchor.x - cutout_size.width / 2, anchor.y - cutout_size.height + 1, cutout_size.width, cutout_size.height};
}

PasteResult paste(const BaseScene& scene, const ObjectCutout& cutout, cv::Point anchor, bool feather) {
    if (scene.image.empty() || scene.image.size() != scene.railway_mask.size())
        throw ValidationError("paste: malformed scene " + scene.scene_id);
    if (cutout.patch.size() != cutout.alpha.size() || cutout.patch.type() != CV_8UC3)
        throw ValidationError("paste: malformed cutout " + cutout.source_id);

    const cv::Rect frame(0, 0, scene.image.cols, scene.image.rows);
    const cv::Rect placed = footprint_rect(cutout.patch.size(), anchor);
    const cv::Rect visible = placed & frame;
    if (visible.empty())
        throw PlacementOutOfFrame("cutout " + cutout.source_id + " at (" + std::to_string(anchor.x) + ", " +
                                  std::to_string(anchor.y) + ") lies outside the frame");
    const cv::Rect src(visible.x - placed.x, visible.y - placed.y, visible.width, visible.height);

    PasteResult r;
    r.image = scene.image.clone();
    r.footprint = cv::Mat::zeros(scene.image.size(), CV_8UC1);
    cutout.alpha(src).copyTo(r.footprint(visible));
    cutout.patch(src).copyTo(r.image(visible), cutout.alpha(src));

    if (feather) {
        // Soften a one-pixel band around the footprint edge, outside it only.
        cv::Mat soft;
        cv::GaussianBlur(r.footprint, soft, {3, 3}, 0);
        cv::Mat blurred_img;
        cv::GaussianBlur(r.image, blurred_img, {3, 3}, 0);
        for (int y = 0; y < r.image.rows; ++y) {
            const auto* s = soft.ptr<std::uint8_t>(y);
            const auto* f = r.footprint.ptr<std::uint8_t>(y);
            auto* px = r.image.ptr<cv::Vec3b>(y);
            const auto* bp = blurred_img.ptr<cv::Vec3b>(y);
            for (int x = 0; x < r.image.cols; ++x) {
                if (f[x] || !s[x]) continue;
                const float a = s[x] / 255.0f;
                for (int c = 0; c < 3; ++c) px[x][c] = cv::saturate_cast<std::uint8_t>(a * bp[x][c] + (1 - a) * px[x][c]);
            }
        }
    }

    cv::bitwise_and(scene.railway_mask, ~r.footprint, r.visible_railway);
    r.visible_railway = binarize(r.visible_railway, 1);
    return r;
}

PolygonSample sample_convex_polygon(Rng& rng, const PolygonParams& params) {
    std::uniform_int_distribution<int> n_dist(3, 8);
    std::uniform_real_distribution<double> radius(params.min_radius, params.max_radius);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const int n = n_dist(rng);
    const double rx = radius(rng);
    const double ry = radius(rng);
    const double phase = unit(rng) * 2.0 * std::numbers::pi;
    const double spacing = 2.0 * std::numbers::pi / n;

    PolygonSample poly;
    const int side = static_cast<int>(std::ceil(2.0 * std::max(rx, ry))) + 2;
    poly.canvas = {side, side};
    const double cx = side / 2.0;
    const double cy = side / 2.0;
    // Jitter below half the spacing keeps angles increasing, so points on the
    // ellipse stay in convex position.
    for (int k = 0; k < n; ++k) {
        const double t = phase + k * spacing + (unit(rng) - 0.5) * 0.7 * spacing;
        poly.vertices.emplace_back(cx + rx * std::cos(t), cy + ry * std::sin(t));
    }
    poly.texture_offset = {static_cast<int>(unit(rng) * 64), static_cast<int>(unit(rng) * 64)};
    return poly;
}

cv::Mat rasterize_convex_polygon(const PolygonSample& polygon) {
    const auto& v = polygon.vertices;
    const std::size_t n = v.size();
    double area2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) area2 += v[i].x * v[(i + 1) % n].y - v[(i + 1) % n].x * v[i].y;
    const double orient = area2 >= 0 ? 1.0 : -1.0;

    cv::Mat mask = cv::Mat::zeros(polygon.canvas, CV_8UC1);
    for (int y = 0; y < mask.rows; ++y) {
        auto* row = mask.ptr<std::uint8_t>(y);
        for (int x = 0; x < mask.cols; ++x) {
            const cv::Point2d p(x + 0.5, y + 0.5);
            bool inside = true;
            for (std::size_t i = 0; i < n && inside; ++i) {
                const cv::Point2d a = v[i];
                const cv::Point2d b = v[(i + 1) % n];
                inside = orient * ((b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)) >= 0.0;
            }
            row[x] = inside ? 255 : 0;
        }
    }
    return mask;
}

ObjectCutout textured_polygon(const cv::Mat& texture, const PolygonSample& polygon) {
    if (texture.type() != CV_8UC3 || texture.rows < 32 || texture.cols < 32)
        throw ValidationError("textured polygon needs a 3-channel texture of at least 32x32");
    cv::Mat canvas(polygon.canvas, CV_8UC3);
    for (int y = 0; y < canvas.rows; ++y)
        for (int x = 0; x < canvas.cols; ++x)
            canvas.at<cv::Vec3b>(y, x) = texture.at<cv::Vec3b>((y + polygon.texture_offset.y) % texture.rows,
                                                                (x + polygon.texture_offset.x) % texture.cols);
    return extract_cutout(canvas, rasterize_convex_polygon(polygon), Category::texture, "polygon");
}

ObjectCutout random_textured_polygon(const cv::Mat& texture, Rng& rng, const PolygonParams& params) {
    return textured_polygon(texture, sample_convex_polygon(rng, params));
}

CompositeSample generate_pair(const BaseScene& scene, const ObjectCutout& cutout, cv::Point anchor, Shift shift,
                              const ShiftRange& range, std::uint64_t seed, bool feather) {
    if (!range.contains(shift))
        throw ValidationError("shift (" + std::to_string(shift.dx) + ", " + std::to_string(shift.dy) +
                              ") outside configured range [" + std::to_string(range.lo) + ", " +
                              std::to_string(range.hi) + "]");
    const PasteResult first = paste(scene, cutout, anchor, feather);
    const PasteResult second = paste(scene, cutout, anchor + cv::Point(shift.dx, shift.dy), feather);

    CompositeSample s;
    s.frame_t = first.image;
    s.frame_t1 = second.image;
    s.mask_t = first.visible_railway;
    s.mask_t1 = second.visible_railway;
    s.placement.anchor = anchor;
    s.placement.shift = shift;
    s.scene_id = scene.scene_id;
    s.seed = seed;
    s.weather = scene.weather;
    s.category = cutout.category;
    return s;
}

namespace {

void coarse_dropout(cv::Mat& image, const std::vector<cv::Rect>& rects) {
    const cv::Scalar mean = cv::mean(image);
    for (const auto& r : rects) image(r).setTo(cv::Scalar(std::round(mean[0]), std::round(mean[1]), std::round(mean[2])));
}

} // namespace

CompositeSample augment(const CompositeSample& sample, Rng& rng, const AugmentPolicy& policy) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    CompositeSample out = sample;
    out.frame_t = sample.frame_t.clone();
    out.frame_t1 = sample.frame_t1.clone();
    out.mask_t = sample.mask_t.clone();
    out.mask_t1 = sample.mask_t1.clone();

    if (unit(rng) < policy.p_flip) {
        for (cv::Mat* m : {&out.frame_t, &out.frame_t1, &out.mask_t, &out.mask_t1}) cv::flip(*m, *m, 1);
        out.hflipped = !out.hflipped;
    }

    if (unit(rng) < policy.p_dropout) {
        const int rows = out.frame_t.rows;
        const int cols = out.frame_t.cols;
        // Side lengths up to sqrt(0.1) of each dimension bound the area at 10%.
        const int max_w = std::max(1, static_cast<int>(std::floor(cols * std::sqrt(0.1))));
        const int max_h = std::max(1, static_cast<int>(std::floor(rows * std::sqrt(0.1))));
        std::uniform_int_distribution<int> count(1, 4);
        std::uniform_int_distribution<int> wd(1, max_w);
        std::uniform_int_distribution<int> hd(1, max_h);
        std::vector<cv::Rect> rects;
        const int k = count(rng);
        for (int i = 0; i < k; ++i) {
            const int w = wd(rng);
            const int h = hd(rng);
            std::uniform_int_distribution<int> xd(0, cols - w);
            std::uniform_int_distribution<int> yd(0, rows - h);
            rects.emplace_back(xd(rng), yd(rng), w, h);
        }
        coarse_dropout(out.frame_t, rects);
        coarse_dropout(out.frame_t1, rects);
    }

    if (unit(rng) < policy.p_brightness) {
        std::uniform_real_distribution<double> scale(0.8, 1.2);
        std::uniform_real_distribution<double> offset(-20.0, 20.0);
        const double a = scale(rng);
        const double b = offset(rng);
        out.frame_t.convertTo(out.frame_t, CV_8UC3, a, b);
        out.frame_t1.convertTo(out.frame_t1, CV_8UC3, a, b);
    }
    return out;
}

} // namespace railsynth
