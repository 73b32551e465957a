#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "railsynth/optical_flow.hpp"
#include "railsynth/segmentation.hpp"
#include "railsynth/synthesis.hpp"
#include "railsynth/training.hpp"

namespace railsynth {

struct PathsConfig {
    std::filesystem::path scenes_dir;
    std::filesystem::path objects_dir;
    std::filesystem::path out_dir;
};

struct FlowConfig {
    FlowSolverParams solver;
    std::optional<std::string> plugin;
    double timeout_s = 30.0;
    /// Where `train`/`eval` look for precomputed flow; empty means
    /// `<manifest dir>/flow`.
    std::filesystem::path flow_dir;
};

enum class DetectBackend { oracle, precomputed, plugin };

struct DetectConfig {
    DetectBackend backend = DetectBackend::oracle;
    double min_confidence = 0.5;
    cv::Vec3b chroma_key{0, 255, 0};
    int tolerance = 40;
    std::string command;
    std::filesystem::path masks_dir;
    double timeout_s = 30.0;
};

struct AblationConfig {
    /// Variant name -> categories it keeps. Empty means all categories plus
    /// one leave-one-out variant per category.
    std::vector<std::pair<std::string, std::vector<Category>>> variants;
    std::map<std::string, std::filesystem::path> eval_manifests;
    bool use_flow = false;
};

struct RootConfig {
    PathsConfig paths;
    SynthesisConfig synthesis;
    FlowConfig flow;
    ModelConfig model;
    /// False when the config leaves in_channels to be derived from --use-flow.
    bool in_channels_set = false;
    TrainConfig train;
    DetectConfig detect;
    AblationConfig ablation;

    ModelConfig model_for(bool use_flow) const;
};

/// Parses a config document. Unknown keys and wrong types throw ConfigError
/// naming the key path (e.g. `synthesis.shift_rage`). Relative paths resolve
/// against `base_dir`.
RootConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

RootConfig load_config(const std::filesystem::path& path);

/// The default variant set used when `ablation.variants` is empty.
std::vector<std::pair<std::string, std::vector<Category>>> default_ablation_variants();

} // namespace railsynth
