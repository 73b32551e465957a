#include "railsynth/extraction.hpp"

#include <algorithm>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "railsynth/errors.hpp"
#include "railsynth/image_io.hpp"

namespace railsynth {

namespace fs = std::filesystem;
using nlohmann::json;

bool BoundingBox::valid_in(cv::Size image) const {
    return x_min < x_max && y_min < y_max && x_min >= 0 && y_min >= 0 && x_max <= image.width &&
           y_max <= image.height;
}

std::string BoundingBox::describe() const {
    std::ostringstream os;
    os << "box [" << x_min << ", " << y_min << ", " << x_max << ", " << y_max << ")";
    if (!category.empty()) os << " '" << category << "'";
    return os.str();
}

namespace {

std::vector<BoundingBox> component_boxes(const cv::Mat& mask, const std::string& category, int min_area,
                                         bool relative_confidence) {
    cv::Mat labels, stats, centroids;
    const int n = cv::connectedComponentsWithStats(mask, labels, stats, centroids, 8, CV_32S);
    int largest = 0;
    for (int i = 1; i < n; ++i) largest = std::max(largest, stats.at<int>(i, cv::CC_STAT_AREA));
    std::vector<BoundingBox> boxes;
    for (int i = 1; i < n; ++i) {
        const int area = stats.at<int>(i, cv::CC_STAT_AREA);
        if (area < min_area) continue;
        BoundingBox b;
        b.x_min = stats.at<int>(i, cv::CC_STAT_LEFT);
        b.y_min = stats.at<int>(i, cv::CC_STAT_TOP);
        b.x_max = b.x_min + stats.at<int>(i, cv::CC_STAT_WIDTH);
        b.y_max = b.y_min + stats.at<int>(i, cv::CC_STAT_HEIGHT);
        b.category = category;
        b.confidence = relative_confidence ? static_cast<double>(area) / largest : 1.0;
        boxes.push_back(b);
    }
    return boxes;
}

cv::Mat require_color(const SourceImage& image) {
    if (image.pixels.empty()) throw ValidationError("empty source image");
    if (image.pixels.type() != CV_8UC3) throw ValidationError("source image must be 8-bit 3-channel");
    return image.pixels;
}

} // namespace

cv::Mat chroma_foreground(const cv::Mat& image, cv::Vec3b chroma_key, int tolerance) {
    CV_Assert(image.type() == CV_8UC3);
    cv::Mat fg(image.size(), CV_8UC1);
    for (int y = 0; y < image.rows; ++y) {
        const auto* src = image.ptr<cv::Vec3b>(y);
        auto* dst = fg.ptr<std::uint8_t>(y);
        for (int x = 0; x < image.cols; ++x) {
            int dist = 0;
            for (int c = 0; c < 3; ++c) dist = std::max(dist, std::abs(int(src[x][c]) - int(chroma_key[c])));
            dst[x] = dist > tolerance ? 255 : 0;
        }
    }
    return fg;
}

ChromaKeyBackend::ChromaKeyBackend(std::string category, cv::Vec3b chroma_key, int tolerance, int min_area)
    : category_(std::move(category)), key_(chroma_key), tolerance_(tolerance), min_area_(min_area) {}

std::vector<BoundingBox> ChromaKeyBackend::detect(const SourceImage& image) {
    return component_boxes(chroma_foreground(require_color(image), key_, tolerance_), category_, min_area_, true);
}

cv::Mat ChromaKeyBackend::segment(const SourceImage& image, const BoundingBox& box) {
    cv::Mat fg = chroma_foreground(require_color(image), key_, tolerance_);
    cv::Mat out = cv::Mat::zeros(fg.size(), CV_8UC1);
    const cv::Rect r = box.rect() & cv::Rect(0, 0, fg.cols, fg.rows);
    fg(r).copyTo(out(r));
    return out;
}

PrecomputedMaskBackend::PrecomputedMaskBackend(std::string category, fs::path mask_dir)
    : category_(std::move(category)), mask_dir_(std::move(mask_dir)) {}

cv::Mat PrecomputedMaskBackend::mask_for(const SourceImage& image) const {
    if (image.path.empty()) throw ValidationError("precomputed backend needs the source image path");
    const fs::path dir = mask_dir_.empty() ? image.path.parent_path() : mask_dir_;
    const fs::path mask_path = dir / (image.path.stem().string() + "_mask.png");
    cv::Mat mask = read_mask(mask_path);
    if (mask.size() != image.pixels.size())
        throw ValidationError("mask " + mask_path.string() + " does not match image dimensions");
    return mask;
}

std::vector<BoundingBox> PrecomputedMaskBackend::detect(const SourceImage& image) {
    return component_boxes(mask_for(image), category_, 1, false);
}

cv::Mat PrecomputedMaskBackend::segment(const SourceImage& image, const BoundingBox& /*box*/) {
    return mask_for(image);
}

SubprocessBackend::SubprocessBackend(std::string command, std::vector<std::string> categories, fs::path scratch_dir,
                                     std::chrono::milliseconds timeout, std::size_t pool_size)
    : pool_(command, pool_size, timeout), categories_(std::move(categories)), scratch_dir_(std::move(scratch_dir)) {}

fs::path SubprocessBackend::materialize(const SourceImage& image) {
    if (!image.path.empty()) return fs::absolute(image.path);
    const fs::path p = fs::absolute(scratch_dir_ / ("extract_" + std::to_string(scratch_counter_++) + ".png"));
    write_png(p, image.pixels);
    return p;
}

std::vector<BoundingBox> SubprocessBackend::detect(const SourceImage& image) {
    const json resp = pool_.request({{"op", "detect"}, {"image", materialize(image).string()}, {"categories", categories_}});
    if (!resp.contains("boxes") || !resp["boxes"].is_array())
        throw PluginError("plugin '" + pool_.command() + "': detect response lacks a 'boxes' array");
    std::vector<BoundingBox> boxes;
    try {
        for (const auto& jb : resp["boxes"]) {
            const auto coords = jb.at("box").get<std::vector<int>>();
            if (coords.size() != 4) throw PluginError("box must have 4 coordinates");
            BoundingBox b{coords[0], coords[1], coords[2], coords[3], jb.value("category", std::string{}),
                          jb.value("confidence", 1.0)};
            boxes.push_back(b);
        }
    } catch (const json::exception& e) {
        throw PluginError("plugin '" + pool_.command() + "': malformed box: " + e.what());
    }
    return boxes;
}

cv::Mat SubprocessBackend::segment(const SourceImage& image, const BoundingBox& box) {
    const json resp = pool_.request({{"op", "segment"},
                                     {"image", materialize(image).string()},
                                     {"box", {box.x_min, box.y_min, box.x_max, box.y_max}}});
    if (!resp.contains("mask") || !resp["mask"].is_string())
        throw PluginError("plugin '" + pool_.command() + "': segment response lacks a 'mask' path");
    return read_mask(resp["mask"].get<std::string>());
}

std::vector<BoundingBox> detect_objects(const SourceImage& image, const std::set<std::string>& allowed_categories,
                                        ExtractorBackend& backend, double min_confidence) {
    if (image.pixels.empty()) throw ValidationError("detect_objects: empty image");
    if (allowed_categories.empty()) throw ValidationError("detect_objects: no allowed categories");
    std::vector<BoundingBox> raw;
    try {
        raw = backend.detect(image);
    } catch (const PluginError&) {
        throw;
    } catch (const std::exception& e) {
        throw PluginError("backend '" + backend.name() + "' failed to detect: " + e.what());
    }
    std::vector<BoundingBox> kept;
    for (auto& b : raw) {
        if (!allowed_categories.contains(b.category) || b.confidence < min_confidence) continue;
        if (!b.valid_in(image.pixels.size()))
            throw PluginError("backend '" + backend.name() + "' returned invalid " + b.describe());
        kept.push_back(std::move(b));
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](const BoundingBox& a, const BoundingBox& b) { return a.confidence > b.confidence; });
    return kept;
}

cv::Mat segment_from_box(const SourceImage& image, const BoundingBox& box, ExtractorBackend& backend) {
    if (!box.valid_in(image.pixels.size())) throw ValidationError("segment_from_box: invalid " + box.describe());
    cv::Mat raw = backend.segment(image, box);
    if (raw.size() != image.pixels.size() || raw.channels() != 1)
        throw PluginError("backend '" + backend.name() + "' returned a mask of the wrong shape for " + box.describe());
    raw = binarize(raw, 1);
    cv::Mat clipped = cv::Mat::zeros(raw.size(), CV_8UC1);
    raw(box.rect()).copyTo(clipped(box.rect()));
    if (cv::countNonZero(clipped) == 0)
        throw ExtractionEmpty("backend '" + backend.name() + "' produced an empty mask for " + box.describe());
    return clipped;
}

ObjectCutout extract_cutout(const cv::Mat& image, const cv::Mat& mask, Category category, std::string source_id) {
    if (image.size() != mask.size()) throw ValidationError("extract_cutout: image and mask dimensions differ");
    const cv::Rect r = nonzero_bounds(mask);
    if (r.empty()) throw ExtractionEmpty("extract_cutout: empty mask" + (source_id.empty() ? "" : " for " + source_id));
    ObjectCutout c;
    c.patch = image(r).clone();
    c.alpha = binarize(mask(r), 1);
    c.category = category;
    c.source_id = std::move(source_id);
    c.native_size = r.size();
    return c;
}

ObjectCutout oracle_extract(const cv::Mat& image, cv::Vec3b chroma_key, int tolerance, Category category,
                            std::string source_id) {
    if (image.empty()) throw ValidationError("oracle_extract: empty image");
    const cv::Mat fg = chroma_foreground(image, chroma_key, tolerance);
    if (cv::countNonZero(fg) == 0)
        throw ExtractionEmpty("oracle_extract: every pixel is within tolerance of the chroma key" +
                              (source_id.empty() ? "" : " in " + source_id));
    return extract_cutout(image, fg, category, std::move(source_id));
}

std::vector<ObjectCutout> extract_all(const SourceImage& image, Category category, ExtractorBackend& backend,
                                      double min_confidence, const std::string& source_id) {
    const std::string cat(to_string(category));
    std::vector<ObjectCutout> out;
    int k = 0;
    for (const auto& box : detect_objects(image, {cat}, backend, min_confidence)) {
        try {
            const cv::Mat mask = segment_from_box(image, box, backend);
            out.push_back(extract_cutout(image.pixels, mask, category, source_id + "#" + std::to_string(k++)));
        } catch (const ExtractionEmpty&) {
            // An empty segmentation drops the box; other boxes still count.
        }
    }
    return out;
}

} // namespace railsynth
