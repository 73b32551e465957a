#pragma once

#include <chrono>
#include <filesystem>
#include <optional>

#include <opencv2/core.hpp>

#include "railsynth/plugin.hpp"
#include "railsynth/tensor.hpp"

namespace railsynth {

/// Per-pixel displacement (CV_32FC1 each) from frame_t to frame_t1, in pixels.
struct FlowField {
    cv::Mat dx;
    cv::Mat dy;

    cv::Size size() const { return dx.size(); }
    bool empty() const { return dx.empty(); }
    static FlowField zeros(cv::Size size);
};

struct FlowSolverParams {
    double smoothness_weight = 0.1;
    int iterations = 200;
    int pyramid_levels = 4;
};

inline constexpr int kMinPyramidSide = 16;

std::vector<std::string> validate_flow_params(const FlowSolverParams& params);

/// Number of pyramid levels actually used for `frame`: the requested count,
/// reduced until the coarsest level keeps kMinPyramidSide pixels on its short side.
int effective_pyramid_levels(cv::Size frame, int requested);

/// Coarse-to-fine Horn-Schunck on ITU-R 601 luminance.
/// At each level the second frame is warped by the current estimate and the
/// linearized data term (Ix*u + Iy*v + It)^2 plus `smoothness_weight` times
/// the squared flow gradient is minimized with Jacobi fixed-point sweeps.
/// Intensities are normalized per level to unit mean squared gradient, so the
/// weight does not depend on image contrast. `iterations` sweeps per level are
/// split over four warps, each followed by a 5x5 median filter of the flow.
FlowField estimate_flow(const cv::Mat& frame_t, const cv::Mat& frame_t1, const FlowSolverParams& params = {});

/// Flow from an external process speaking the flow plugin protocol. Frames are
/// written to `scratch_dir`. The result is checked for dimensions and finiteness.
FlowField external_flow(const cv::Mat& frame_t, const cv::Mat& frame_t1, PluginProcess& plugin,
                        const std::filesystem::path& scratch_dir);

FlowField external_flow(const cv::Mat& frame_t, const cv::Mat& frame_t1, const std::string& plugin_command,
                        const std::filesystem::path& scratch_dir,
                        std::chrono::milliseconds timeout = std::chrono::seconds(30));

/// Throws PluginError naming the first non-finite pixel or a size mismatch.
void check_flow(const FlowField& flow, cv::Size expected, const std::string& origin);

/// 255 where the flow magnitude exceeds `threshold` (> 0) pixels.
cv::Mat flow_magnitude_mask(const FlowField& flow, double threshold);

/// Mirrors a flow field horizontally and negates dx.
FlowField hflip_flow(const FlowField& flow);

inline constexpr float kFlowClamp = 16.0f;

/// [R, G, B] in [0, 1], followed by [dx, dy] clamped to +-16 px and scaled to
/// [-1, 1] when `flow` is given.
InputStack fuse_inputs(const cv::Mat& image, const FlowField* flow);

/// Little-endian "RSFL" file: magic, u32 H, u32 W, then H*W (dx, dy) float32 pairs.
void write_flow(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flow(const std::filesystem::path& path);

} // namespace railsynth
