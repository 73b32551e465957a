#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "railsynth/nn.hpp"
#include "railsynth/optical_flow.hpp"
#include "railsynth/tensor.hpp"

namespace railsynth {

struct ModelConfig {
    int in_channels = 3;
    int base_width = 16;
    int depth = 4;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::vector<std::string> validate_model_config(const ModelConfig& config);

/// Small U-shaped encoder-decoder: `depth` levels of two 3x3 conv + ReLU with
/// 2x2 max pooling, nearest upsampling with skip concatenation on the way
/// back, and a 1x1 head followed by a sigmoid. Width doubles per level.
class UNet {
public:
    UNet(const ModelConfig& config, std::uint64_t seed);
    ~UNet();
    UNet(UNet&&) noexcept;
    UNet& operator=(UNet&&) noexcept;

    const ModelConfig& config() const { return config_; }

    /// Per-pixel railway probability (1 x H x W, values in (0, 1)). Inputs whose
    /// sides are not multiples of 2^depth are edge-padded and the output cropped.
    /// Keeps activations for a following backward().
    Tensor forward(const InputStack& input);

    /// Accumulates parameter gradients for d(loss)/d(probability).
    void backward(const Tensor& grad_prob);

    std::vector<nn::Parameter*> parameters();
    std::vector<float> flat_weights() const;
    void set_flat_weights(const std::vector<float>& weights);
    UNet clone() const;

    void save(const std::filesystem::path& path) const;
    static UNet load(const std::filesystem::path& path);

private:
    struct Impl;
    ModelConfig config_;
    std::unique_ptr<Impl> impl_;
};

/// Free-function form of model.forward(stack).
Tensor forward(UNet& model, const InputStack& stack);

inline constexpr double kJaccardEps = 1e-7;

/// Soft Jaccard loss 1 - (sum(p*t) + eps) / (sum(p) + sum(t) - sum(p*t) + eps).
/// When `grad` is non-null it receives d(loss)/d(pred).
double jaccard_loss(const Tensor& pred, const Tensor& target, Tensor* grad = nullptr);

/// {0, 255} mask to a 1 x H x W {0, 1} tensor.
Tensor mask_to_target(const cv::Mat& mask);

/// {0, 255} mask where probability > threshold.
cv::Mat probability_to_mask(const Tensor& prob, double threshold);

/// Thresholded forward pass. Flow must be supplied iff the model has 5 input
/// channels; a mismatch throws ValidationError.
cv::Mat predict(UNet& model, const cv::Mat& image, const FlowField* flow, double threshold = 0.5);

} // namespace railsynth
