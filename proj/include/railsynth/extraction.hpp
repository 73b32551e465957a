#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "railsynth/plugin.hpp"
#include "railsynth/scene.hpp"

namespace railsynth {

/// Half-open pixel box [x_min, x_max) x [y_min, y_max).
struct BoundingBox {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;
    std::string category;
    double confidence = 0.0;

    cv::Rect rect() const { return {x_min, y_min, x_max - x_min, y_max - y_min}; }
    bool valid_in(cv::Size image) const;
    std::string describe() const;
};

/// An image handed to a backend. `path` is optional; backends that need a file
/// (plugins, precomputed masks) use it when present.
struct SourceImage {
    cv::Mat pixels;
    std::filesystem::path path;

    SourceImage(cv::Mat img) : pixels(std::move(img)) {} // NOLINT(google-explicit-constructor)
    SourceImage(cv::Mat img, std::filesystem::path p) : pixels(std::move(img)), path(std::move(p)) {}
};

/// The detect -> segment chain. Concrete backends: chroma-key oracle,
/// precomputed mask directory, external subprocess.
class ExtractorBackend {
public:
    virtual ~ExtractorBackend() = default;
    virtual std::string name() const = 0;
    virtual std::vector<BoundingBox> detect(const SourceImage& image) = 0;
    /// Full-image-sized binary mask prompted by `box`. May spill outside the box.
    virtual cv::Mat segment(const SourceImage& image, const BoundingBox& box) = 0;
};

/// Object images rendered on a flat chroma-key color. A pixel is foreground
/// when its max per-channel distance to the key exceeds `tolerance`.
class ChromaKeyBackend final : public ExtractorBackend {
public:
    ChromaKeyBackend(std::string category, cv::Vec3b chroma_key = {0, 255, 0}, int tolerance = 40,
                     int min_area = 16);

    std::string name() const override { return "oracle"; }
    std::vector<BoundingBox> detect(const SourceImage& image) override;
    cv::Mat segment(const SourceImage& image, const BoundingBox& box) override;

private:
    std::string category_;
    cv::Vec3b key_;
    int tolerance_;
    int min_area_;
};

/// (image, mask) pairs on disk: `<dir>/<stem>_mask.png` next to `<stem>.png`,
/// or under `mask_dir` when given. Each 8-connected mask component becomes a
/// detection with confidence 1.
class PrecomputedMaskBackend final : public ExtractorBackend {
public:
    explicit PrecomputedMaskBackend(std::string category, std::filesystem::path mask_dir = {});

    std::string name() const override { return "precomputed"; }
    std::vector<BoundingBox> detect(const SourceImage& image) override;
    cv::Mat segment(const SourceImage& image, const BoundingBox& box) override;

private:
    cv::Mat mask_for(const SourceImage& image) const;

    std::string category_;
    std::filesystem::path mask_dir_;
};

/// Line-delimited JSON subprocess (see README for the wire format). Images
/// without a path are written to `scratch_dir` first.
class SubprocessBackend final : public ExtractorBackend {
public:
    SubprocessBackend(std::string command, std::vector<std::string> categories,
                      std::filesystem::path scratch_dir,
                      std::chrono::milliseconds timeout = std::chrono::seconds(30), std::size_t pool_size = 1);

    std::string name() const override { return "plugin:" + pool_.command(); }
    std::vector<BoundingBox> detect(const SourceImage& image) override;
    cv::Mat segment(const SourceImage& image, const BoundingBox& box) override;

private:
    std::filesystem::path materialize(const SourceImage& image);

    PluginPool pool_;
    std::vector<std::string> categories_;
    std::filesystem::path scratch_dir_;
    std::size_t scratch_counter_ = 0;
};

/// Boxes from `backend` restricted to `allowed_categories` and
/// `min_confidence`, sorted by descending confidence (ties keep backend order).
std::vector<BoundingBox> detect_objects(const SourceImage& image, const std::set<std::string>& allowed_categories,
                                        ExtractorBackend& backend, double min_confidence = 0.0);

/// Backend mask clipped to `box`. Throws ExtractionEmpty when nothing remains.
cv::Mat segment_from_box(const SourceImage& image, const BoundingBox& box, ExtractorBackend& backend);

/// Tight crop of `image` to the bounding box of `mask`.
ObjectCutout extract_cutout(const cv::Mat& image, const cv::Mat& mask, Category category = Category::person,
                            std::string source_id = {});

/// Deterministic stand-in for the detector/segmenter chain on chroma-keyed images.
ObjectCutout oracle_extract(const cv::Mat& image, cv::Vec3b chroma_key, int tolerance,
                            Category category = Category::person, std::string source_id = {});

/// Foreground mask of a chroma-keyed image (max per-channel distance > tolerance).
cv::Mat chroma_foreground(const cv::Mat& image, cv::Vec3b chroma_key, int tolerance);

/// Every cutout the backend yields for one object image (detect, then segment each box).
std::vector<ObjectCutout> extract_all(const SourceImage& image, Category category, ExtractorBackend& backend,
                                      double min_confidence, const std::string& source_id);

} // namespace railsynth
