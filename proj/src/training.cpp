#include "railsynth/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "railsynth/errors.hpp"
#include "railsynth/evaluation.hpp"
#include "railsynth/synthesis.hpp"

namespace railsynth {

namespace fs = std::filesystem;

std::vector<std::string> validate_train_config(const TrainConfig& config) {
    std::vector<std::string> v;
    if (config.batch_size < 1) v.emplace_back("batch_size must be >= 1");
    if (config.epochs < 1) v.emplace_back("epochs must be >= 1");
    if (!(config.lr > 0.0)) v.emplace_back("lr must be > 0");
    if (!(config.weight_decay >= 0.0)) v.emplace_back("weight_decay must be >= 0");
    if (!(config.val_fraction > 0.0 && config.val_fraction < 1.0)) v.emplace_back("val_fraction must be in (0, 1)");
    return v;
}

std::string flow_file_name(const SampleRecord& record) {
    return fs::path(record.frame_t).stem().string() + ".rsfl";
}

fs::path FlowDirectory::path_for(const fs::path& manifest_dir, const SampleRecord& record) const {
    const fs::path dir = dir_.empty() ? manifest_dir / "flow" : dir_;
    return dir / flow_file_name(record);
}

FlowField FlowDirectory::flow_for(const fs::path& manifest_dir, const LoadedSample& sample) {
    FlowField f = read_flow(path_for(manifest_dir, sample.record));
    if (f.size() != sample.frame_t.size())
        throw ValidationError("flow for " + sample.record.frame_t + " does not match the frame dimensions");
    return f;
}

std::vector<std::string> FlowDirectory::missing(const fs::path& manifest_dir,
                                                std::span<const SampleRecord> records) const {
    std::vector<std::string> out;
    for (const auto& r : records)
        if (!fs::exists(path_for(manifest_dir, r))) out.push_back(path_for(manifest_dir, r).string());
    return out;
}

FlowField SolverFlowSource::flow_for(const fs::path& manifest_dir, const LoadedSample& sample) {
    const std::string key = (manifest_dir / sample.record.frame_t).string();
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    FlowField f = estimate_flow(sample.frame_t, sample.frame_t1, params_);
    cache_.emplace(key, f);
    return f;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_train_val(std::size_t n, double val_fraction,
                                                                              std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(sample_seed(seed, 0x5eed));
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
    if (n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    else n_val = 0;
    std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> tr(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val.begin(), val.end());
    std::sort(tr.begin(), tr.end());
    return {tr, val};
}

void write_history(const std::vector<EpochRecord>& history, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write history " + path.string());
    for (const auto& e : history)
        out << nlohmann::json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_miou", e.val_miou}}.dump() << '\n';
}

TrainResult train(const fs::path& manifest, const ModelConfig& model_config, const TrainConfig& train_config,
                  bool use_flow, const TrainOptions& options) {
    if (const auto v = validate_train_config(train_config); !v.empty()) throw ConfigError("train: " + v.front());
    if (model_config.in_channels != (use_flow ? 5 : 3))
        throw ConfigError(std::string("model.in_channels must be ") + (use_flow ? "5 when training with flow" : "3 without flow"));

    const auto records = load_manifest(manifest);
    if (records.empty()) throw ValidationError("train: manifest " + manifest.string() + " is empty");
    const fs::path manifest_dir = manifest.has_parent_path() ? manifest.parent_path() : fs::path(".");

    FlowDirectory default_flow;
    FlowSource* flow_source = options.flow ? options.flow : &default_flow;
    if (use_flow) {
        const auto gaps = flow_source->missing(manifest_dir, records);
        if (!gaps.empty()) {
            std::string msg = "train --use-flow: flow missing for " + std::to_string(gaps.size()) + " sample(s):";
            for (const auto& g : gaps) msg += "\n  " + g;
            throw ValidationError(msg);
        }
    }

    std::vector<LoadedSample> samples;
    std::vector<FlowField> flows;
    samples.reserve(records.size());
    for (const auto& r : records) {
        samples.push_back(load_sample(manifest_dir, r));
        if (use_flow) flows.push_back(flow_source->flow_for(manifest_dir, samples.back()));
    }

    auto [train_idx, val_idx] = split_train_val(samples.size(), train_config.val_fraction, train_config.seed);
    if (val_idx.empty()) val_idx = train_idx;

    UNet model(model_config, train_config.seed);
    nn::AdamW optimizer(model.parameters(), train_config.lr, train_config.weight_decay);

    TrainResult result;
    double best_miou = -1.0;
    const std::size_t batch = static_cast<std::size_t>(train_config.batch_size);

    for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
        std::vector<std::size_t> order = train_idx;
        Rng shuffle_rng(sample_seed(train_config.seed, 0x100000ULL + static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0.0;
        int epoch_steps = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            const float scale = 1.0f / static_cast<float>(end - start);
            optimizer.zero_grad();
            double batch_loss = 0.0;
            for (std::size_t b = start; b < end; ++b) {
                const std::size_t idx = order[b];
                Rng aug_rng(sample_seed(train_config.seed ^ 0xa5a5a5a5ULL,
                                        static_cast<std::uint64_t>(epoch) * samples.size() + idx));
                const CompositeSample aug = augment(to_composite(samples[idx]), aug_rng, train_config.augment);
                InputStack input;
                if (use_flow) {
                    const FlowField f = aug.hflipped ? hflip_flow(flows[idx]) : flows[idx];
                    input = fuse_inputs(aug.frame_t, &f);
                } else {
                    input = fuse_inputs(aug.frame_t, nullptr);
                }
                const Tensor prob = model.forward(input);
                Tensor grad;
                batch_loss += jaccard_loss(prob, mask_to_target(aug.mask_t), &grad);
                for (float& g : grad.data) g *= scale;
                model.backward(grad);
            }
            optimizer.step();
            batch_loss /= static_cast<double>(end - start);
            result.step_losses.push_back(batch_loss);
            epoch_loss += batch_loss;
            ++epoch_steps;
        }

        BandMetrics val;
        for (std::size_t idx : val_idx) {
            const FlowField* f = use_flow ? &flows[idx] : nullptr;
            val.add(predict(model, samples[idx].frame_t, f), samples[idx].mask_t);
        }
        EpochRecord rec{epoch, epoch_steps ? epoch_loss / epoch_steps : 0.0, val.miou()};
        result.history.push_back(rec);
        if (rec.val_miou > best_miou) {
            best_miou = rec.val_miou;
            result.best_epoch = epoch;
            result.best_model = model.clone();
        }
        if (options.on_epoch) options.on_epoch(rec);
    }
    result.optimizer_steps = optimizer.steps();

    if (!options.out_dir.empty()) {
        fs::create_directories(options.out_dir);
        result.checkpoint = options.out_dir / "best.ckpt";
        result.best_model->save(result.checkpoint);
        write_history(result.history, options.out_dir / "history.jsonl");
    }
    return result;
}

} // namespace railsynth
