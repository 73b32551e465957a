#pragma once

#include <cassert>
#include <span>
#include <vector>

namespace railsynth {

/// Dense CHW float tensor for a single sample.
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const { return data.size(); }

    float& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
    float at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }

    std::span<float> channel(int c) { return {data.data() + c * plane(), plane()}; }
    std::span<const float> channel(int c) const { return {data.data() + c * plane(), plane()}; }

    bool same_shape(const Tensor& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

/// Network input: 3 (RGB) or 5 (RGB + flow) channels.
using InputStack = Tensor;

} // namespace railsynth
