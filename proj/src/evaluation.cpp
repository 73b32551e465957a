#include "railsynth/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>

#include <opencv2/imgproc.hpp>

#include "railsynth/errors.hpp"
#include "railsynth/image_io.hpp"
#include "railsynth/manifest.hpp"
#include "railsynth/training.hpp"

namespace railsynth {

namespace fs = std::filesystem;
using nlohmann::json;

ConfusionCounts confusion_counts(const cv::Mat& pred, const cv::Mat& gt, int class_id) {
    if (pred.size() != gt.size()) throw ValidationError("confusion_counts: mask dimensions differ");
    if (pred.type() != CV_8UC1 || gt.type() != CV_8UC1) throw ValidationError("confusion_counts: masks must be 8-bit 1-channel");
    if (class_id != kRailwayClass && class_id != kBackgroundClass)
        throw ValidationError("confusion_counts: class_id must be 0 or 1");
    ConfusionCounts c;
    for (int y = 0; y < pred.rows; ++y) {
        const auto* p = pred.ptr<std::uint8_t>(y);
        const auto* g = gt.ptr<std::uint8_t>(y);
        for (int x = 0; x < pred.cols; ++x) {
            const bool pi = (p[x] != 0) == (class_id == kRailwayClass);
            const bool gi = (g[x] != 0) == (class_id == kRailwayClass);
            if (pi && gi) ++c.tp;
            else if (pi) ++c.fp;
            else if (gi) ++c.fn;
            else ++c.tn;
        }
    }
    return c;
}

double iou(const ConfusionCounts& c) {
    const std::uint64_t den = c.tp + c.fp + c.fn;
    return den == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(den);
}

double miou(std::span<const double> per_class_ious) {
    if (per_class_ious.empty()) throw ValidationError("miou: empty sequence");
    double s = 0.0;
    for (double v : per_class_ious) s += v;
    return s / static_cast<double>(per_class_ious.size());
}

double pixel_accuracy(const cv::Mat& pred, const cv::Mat& gt) {
    return pixel_accuracy(confusion_counts(pred, gt, kRailwayClass));
}

double pixel_accuracy(const ConfusionCounts& c) {
    return c.total() == 0 ? 1.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

std::vector<ObstacleRegion> obstacle_regions(const cv::Mat& pred_railway, const cv::Mat& railway_roi, int min_area) {
    if (pred_railway.size() != railway_roi.size()) throw ValidationError("obstacle_regions: mask dimensions differ");
    cv::Mat intrusion;
    cv::bitwise_and(binarize(railway_roi, 1), ~binarize(pred_railway, 1), intrusion);
    cv::Mat labels, stats, centroids;
    const int n = cv::connectedComponentsWithStats(intrusion, labels, stats, centroids, 8, CV_32S);
    std::vector<ObstacleRegion> out;
    for (int i = 1; i < n; ++i) {
        const int area = stats.at<int>(i, cv::CC_STAT_AREA);
        if (area < min_area) continue;
        out.push_back({cv::Rect(stats.at<int>(i, cv::CC_STAT_LEFT), stats.at<int>(i, cv::CC_STAT_TOP),
                                stats.at<int>(i, cv::CC_STAT_WIDTH), stats.at<int>(i, cv::CC_STAT_HEIGHT)),
                       area, cv::Point2d(centroids.at<double>(i, 0), centroids.at<double>(i, 1))});
    }
    std::sort(out.begin(), out.end(), [](const ObstacleRegion& a, const ObstacleRegion& b) {
        if (a.area != b.area) return a.area > b.area;
        if (a.bbox.y != b.bbox.y) return a.bbox.y < b.bbox.y;
        return a.bbox.x < b.bbox.x;
    });
    return out;
}

void BandMetrics::add(const cv::Mat& pred, const cv::Mat& gt) {
    const ConfusionCounts rail = confusion_counts(pred, gt, kRailwayClass);
    railway += rail;
    // The background class is the railway class with roles swapped.
    background += ConfusionCounts{rail.tn, rail.fn, rail.fp, rail.tp};
    ++samples;
}

double BandMetrics::miou() const {
    const double ious[] = {iou_background(), iou_railway()};
    return railsynth::miou(ious);
}

double BandMetrics::pixel_accuracy() const { return railsynth::pixel_accuracy(railway); }

namespace {

json counts_json(const ConfusionCounts& c) { return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}}; }

ConfusionCounts counts_from(const json& j) {
    return {j.at("tp").get<std::uint64_t>(), j.at("fp").get<std::uint64_t>(), j.at("fn").get<std::uint64_t>(),
            j.at("tn").get<std::uint64_t>()};
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace

json EvalReport::to_json() const {
    json bands = json::object();
    for (const auto& [name, m] : per_band) {
        bands[name] = {{"samples", m.samples},
                       {"iou", {{"non_railway", m.iou_background()}, {"railway", m.iou_railway()}}},
                       {"miou", m.miou()},
                       {"pixel_accuracy", m.pixel_accuracy()},
                       {"counts", {{"railway", counts_json(m.railway)}, {"non_railway", counts_json(m.background)}}}};
    }
    return {{"per_band", bands},
            {"config_fingerprint", config_fingerprint},
            {"timestamp", timestamp},
            {"averaging", averaging},
            {"use_flow", use_flow}};
}

EvalReport EvalReport::from_json(const json& j) {
    EvalReport r;
    try {
        r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
        r.timestamp = j.at("timestamp").get<std::string>();
        r.averaging = j.value("averaging", std::string("micro"));
        r.use_flow = j.value("use_flow", false);
        for (const auto& [name, b] : j.at("per_band").items()) {
            BandMetrics m;
            m.samples = b.at("samples").get<std::size_t>();
            m.railway = counts_from(b.at("counts").at("railway"));
            m.background = counts_from(b.at("counts").at("non_railway"));
            r.per_band[name] = m;
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed report: ") + e.what());
    }
    return r;
}

void write_report(const EvalReport& report, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write report " + path.string());
    out << report.to_json().dump(2) << '\n';
}

EvalReport read_report(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read report " + path.string());
    try {
        return EvalReport::from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

namespace {

void accumulate_manifest(UNet& model, const fs::path& manifest, bool use_flow, FlowSource& flow_source,
                         BandMetrics& metrics) {
    const auto records = load_manifest(manifest);
    const fs::path dir = manifest.has_parent_path() ? manifest.parent_path() : fs::path(".");
    if (use_flow) {
        const auto gaps = flow_source.missing(dir, records);
        if (!gaps.empty()) throw ValidationError("flow missing for " + gaps.front() + " (and " +
                                                 std::to_string(gaps.size() - 1) + " more)");
    }
    for (const auto& r : records) {
        const LoadedSample s = load_sample(dir, r);
        if (use_flow) {
            const FlowField f = flow_source.flow_for(dir, s);
            metrics.add(predict(model, s.frame_t, &f), s.mask_t);
        } else {
            metrics.add(predict(model, s.frame_t, nullptr), s.mask_t);
        }
    }
}

} // namespace

EvalReport evaluate_bands(UNet& model, const std::map<std::string, fs::path>& band_manifests, bool use_flow,
                          FlowSource* flow_source, const std::string& fingerprint) {
    FlowDirectory default_flow;
    FlowSource& source = flow_source ? *flow_source : default_flow;
    EvalReport report;
    report.use_flow = use_flow;
    report.config_fingerprint = fingerprint;
    report.timestamp = utc_timestamp();
    for (const auto& [band, manifest] : band_manifests) {
        if (!fs::exists(manifest)) {
            std::cerr << "warning: band '" << band << "' manifest " << manifest << " not found; skipped\n";
            continue;
        }
        BandMetrics m;
        accumulate_manifest(model, manifest, use_flow, source, m);
        if (m.samples == 0) {
            std::cerr << "warning: band '" << band << "' has no samples; skipped\n";
            continue;
        }
        report.per_band[band] = m;
    }
    if (report.per_band.empty()) throw ValidationError("evaluation produced no band results");
    return report;
}

BandMetrics evaluate_union(UNet& model, const std::vector<fs::path>& manifests, bool use_flow, FlowSource* flow_source) {
    FlowDirectory default_flow;
    FlowSource& source = flow_source ? *flow_source : default_flow;
    BandMetrics m;
    for (const auto& manifest : manifests) accumulate_manifest(model, manifest, use_flow, source, m);
    if (m.samples == 0) throw ValidationError("evaluation set is empty");
    return m;
}

void write_overlays(UNet& model, const fs::path& manifest, bool use_flow, FlowSource* flow_source,
                    const fs::path& out_dir, std::size_t max_samples) {
    FlowDirectory default_flow;
    FlowSource& source = flow_source ? *flow_source : default_flow;
    const auto records = load_manifest(manifest);
    const fs::path dir = manifest.has_parent_path() ? manifest.parent_path() : fs::path(".");
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < records.size() && i < max_samples; ++i) {
        const LoadedSample s = load_sample(dir, records[i]);
        std::optional<FlowField> flow;
        if (use_flow) flow = source.flow_for(dir, s);
        const cv::Mat pred = predict(model, s.frame_t, flow ? &*flow : nullptr);

        // Green: agreed railway; red: missed railway; blue: railway predicted on non-railway.
        cv::Mat overlay = s.frame_t.clone();
        for (int y = 0; y < overlay.rows; ++y)
            for (int x = 0; x < overlay.cols; ++x) {
                const bool p = pred.at<std::uint8_t>(y, x) != 0;
                const bool g = s.mask_t.at<std::uint8_t>(y, x) != 0;
                if (!p && !g) continue;
                const cv::Vec3b tint = (p && g) ? cv::Vec3b(0, 200, 0) : (g ? cv::Vec3b(0, 0, 255) : cv::Vec3b(255, 0, 0));
                auto& px = overlay.at<cv::Vec3b>(y, x);
                for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>((px[c] + tint[c]) / 2);
            }
        char name[64];
        std::snprintf(name, sizeof name, "%04zu_overlay.png", i);
        write_png(out_dir / name, overlay);

        const FlowField f = flow ? *flow : estimate_flow(s.frame_t, s.frame_t1);
        cv::Mat mag;
        cv::magnitude(f.dx, f.dy, mag);
        cv::Mat mag8;
        mag.convertTo(mag8, CV_8U, 255.0 / kFlowClamp);
        cv::Mat heat;
        cv::applyColorMap(mag8, heat, cv::COLORMAP_JET);
        std::snprintf(name, sizeof name, "%04zu_flow.png", i);
        write_png(out_dir / name, heat);
    }
}

json AblationTable::to_json() const {
    json rows_json = json::array();
    for (const auto& r : rows)
        rows_json.push_back({{"variant", r.variant}, {"miou", r.miou}, {"pixel_accuracy", r.pixel_accuracy},
                             {"train_samples", r.train_samples}});
    return {{"rows", rows_json}, {"eval_split", eval_split}};
}

AblationTable run_ablation(const std::vector<std::pair<std::string, fs::path>>& variants,
                           const ModelConfig& model_config, const TrainConfig& train_config,
                           const std::vector<fs::path>& eval_manifests, bool use_flow, FlowSource* flow_source,
                           const fs::path& work_dir) {
    if (variants.size() < 2) throw ConfigError("ablation needs at least 2 dataset variants");
    if (eval_manifests.empty()) throw ConfigError("ablation needs at least one evaluation manifest");
    AblationTable table;
    for (const auto& [name, manifest] : variants) {
        try {
            TrainOptions opts;
            opts.flow = flow_source;
            if (!work_dir.empty()) opts.out_dir = work_dir / name;
            TrainResult result = train(manifest, model_config, train_config, use_flow, opts);
            const BandMetrics m = evaluate_union(*result.best_model, eval_manifests, use_flow, flow_source);
            table.rows.push_back({name, m.miou(), m.pixel_accuracy(), load_manifest(manifest).size()});
        } catch (const Error& e) {
            const std::string msg = "ablation variant '" + name + "' failed: " + e.what();
            if (e.is_user_error()) throw ValidationError(msg);
            throw Error(msg);
        }
    }
    return table;
}

std::string fingerprint(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace railsynth
