#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "railsynth/compositor.hpp"
#include "railsynth/manifest.hpp"
#include "railsynth/optical_flow.hpp"
#include "railsynth/segmentation.hpp"

namespace railsynth {

struct TrainConfig {
    int batch_size = 8;
    int epochs = 20;
    double lr = 3e-4;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    double val_fraction = 0.1;
    AugmentPolicy augment{};
};

std::vector<std::string> validate_train_config(const TrainConfig& config);

/// Supplies frame_t -> frame_t1 flow for manifest samples.
class FlowSource {
public:
    virtual ~FlowSource() = default;
    virtual FlowField flow_for(const std::filesystem::path& manifest_dir, const LoadedSample& sample) = 0;
    /// Human-readable list of samples whose flow is unavailable.
    virtual std::vector<std::string> missing(const std::filesystem::path& manifest_dir,
                                             std::span<const SampleRecord> records) const = 0;
};

/// `<dir>/<frame_t stem>.rsfl`; an empty dir means `<manifest_dir>/flow`.
class FlowDirectory final : public FlowSource {
public:
    explicit FlowDirectory(std::filesystem::path dir = {}) : dir_(std::move(dir)) {}
    FlowField flow_for(const std::filesystem::path& manifest_dir, const LoadedSample& sample) override;
    std::vector<std::string> missing(const std::filesystem::path& manifest_dir,
                                     std::span<const SampleRecord> records) const override;
    std::filesystem::path path_for(const std::filesystem::path& manifest_dir, const SampleRecord& record) const;

private:
    std::filesystem::path dir_;
};

/// Runs the built-in solver on demand and memoizes per frame path.
class SolverFlowSource final : public FlowSource {
public:
    explicit SolverFlowSource(FlowSolverParams params = {}) : params_(params) {}
    FlowField flow_for(const std::filesystem::path& manifest_dir, const LoadedSample& sample) override;
    std::vector<std::string> missing(const std::filesystem::path&, std::span<const SampleRecord>) const override {
        return {};
    }

private:
    FlowSolverParams params_;
    std::map<std::string, FlowField> cache_;
};

/// File name of a sample's flow: frame_t stem + ".rsfl".
std::string flow_file_name(const SampleRecord& record);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_miou = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::vector<double> step_losses;
    long long optimizer_steps = 0;
    int best_epoch = 0;
    std::optional<UNet> best_model;
    std::filesystem::path checkpoint;
};

struct TrainOptions {
    /// Flow provider when training with flow; null means FlowDirectory{}.
    FlowSource* flow = nullptr;
    /// When set, best.ckpt and history.jsonl are written here.
    std::filesystem::path out_dir;
    /// Called after every epoch.
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Deterministic train/val split: indices shuffled with the seed, the first
/// round(N * val_fraction) (at least 1 when N >= 2) become validation.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_train_val(std::size_t n, double val_fraction,
                                                                              std::uint64_t seed);

/// Trains a model on mask_t targets with Jaccard loss and AdamW. Each epoch
/// makes ceil(N_train / batch_size) optimizer steps; the batch loss is the mean
/// per-sample loss. The model with the best validation mIoU is kept.
TrainResult train(const std::filesystem::path& manifest, const ModelConfig& model_config,
                  const TrainConfig& train_config, bool use_flow, const TrainOptions& options = {});

/// history.jsonl: one {"epoch", "train_loss", "val_miou"} object per line.
void write_history(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

} // namespace railsynth
