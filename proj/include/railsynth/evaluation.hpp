#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "railsynth/segmentation.hpp"

namespace railsynth {

class FlowSource;
struct TrainConfig;

inline constexpr int kRailwayClass = 1;
inline constexpr int kBackgroundClass = 0;

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Counts for `class_id` (1 = railway = nonzero pixel, 0 = non-railway).
ConfusionCounts confusion_counts(const cv::Mat& pred, const cv::Mat& gt, int class_id);

/// tp / (tp + fp + fn); 1.0 when the class is neither present nor predicted.
double iou(const ConfusionCounts& counts);

/// Arithmetic mean; throws ValidationError on an empty sequence.
double miou(std::span<const double> per_class_ious);

double pixel_accuracy(const cv::Mat& pred, const cv::Mat& gt);

/// Pixel accuracy from class-1 counts: (tp + tn) / total.
double pixel_accuracy(const ConfusionCounts& railway_counts);

struct ObstacleRegion {
    cv::Rect bbox;
    int area = 0;
    cv::Point2d centroid;
};

/// 8-connected components of (railway_roi AND NOT pred_railway) with at least
/// `min_area` pixels, sorted by area descending, then bbox top, then bbox left.
std::vector<ObstacleRegion> obstacle_regions(const cv::Mat& pred_railway, const cv::Mat& railway_roi, int min_area);

/// Micro-averaged metrics over a set of predictions.
struct BandMetrics {
    ConfusionCounts railway;
    ConfusionCounts background;
    std::size_t samples = 0;

    void add(const cv::Mat& pred, const cv::Mat& gt);
    double iou_railway() const { return iou(railway); }
    double iou_background() const { return iou(background); }
    double miou() const;
    double pixel_accuracy() const;
};

struct EvalReport {
    std::map<std::string, BandMetrics> per_band;
    std::string config_fingerprint;
    std::string timestamp;
    std::string averaging = "micro";
    bool use_flow = false;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
};

/// Evaluates `model` on every band manifest (mask_t is the ground truth for
/// frame_t). Missing band files are skipped with a warning; an empty report
/// raises ValidationError.
EvalReport evaluate_bands(UNet& model, const std::map<std::string, std::filesystem::path>& band_manifests,
                          bool use_flow, FlowSource* flow_source = nullptr, const std::string& fingerprint = {});

/// Micro-averaged metrics over the union of the given manifests.
BandMetrics evaluate_union(UNet& model, const std::vector<std::filesystem::path>& manifests, bool use_flow,
                           FlowSource* flow_source = nullptr);

/// Writes the report JSON (2-space indent, trailing newline).
void write_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

/// Static figures: per-sample prediction-vs-truth overlays and flow-magnitude heatmaps.
void write_overlays(UNet& model, const std::filesystem::path& manifest, bool use_flow, FlowSource* flow_source,
                    const std::filesystem::path& out_dir, std::size_t max_samples = 16);

struct AblationRow {
    std::string variant;
    double miou = 0.0;
    double pixel_accuracy = 0.0;
    std::size_t train_samples = 0;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    std::string eval_split = "union of bands";

    nlohmann::json to_json() const;
};

/// Trains one model per variant with identical model/train config and seed,
/// evaluates each on the union of `eval_manifests`. A variant that fails to
/// train aborts the run with an Error naming it.
AblationTable run_ablation(const std::vector<std::pair<std::string, std::filesystem::path>>& variants,
                           const ModelConfig& model_config, const TrainConfig& train_config,
                           const std::vector<std::filesystem::path>& eval_manifests, bool use_flow,
                           FlowSource* flow_source = nullptr, const std::filesystem::path& work_dir = {});

/// FNV-1a 64 over a byte string, rendered as 16 hex digits.
std::string fingerprint(std::string_view bytes);

} // namespace railsynth
