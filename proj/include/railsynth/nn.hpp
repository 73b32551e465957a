#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "railsynth/tensor.hpp"

namespace railsynth::nn {

struct Parameter {
    std::vector<float> value;
    std::vector<float> grad;

    explicit Parameter(std::size_t n = 0) : value(n, 0.0f), grad(n, 0.0f) {}
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

/// Square convolution, stride 1, zero "same" padding, with bias. Keeps the
/// lowered input of the last forward call for backward().
class Conv2d {
public:
    Conv2d(int in_channels, int out_channels, int kernel, std::mt19937_64& rng);

    Tensor forward(const Tensor& x);
    /// Accumulates parameter gradients and returns d(loss)/d(input).
    Tensor backward(const Tensor& grad_out);

    std::vector<Parameter*> parameters() { return {&weight_, &bias_}; }
    int in_channels() const { return in_; }
    int out_channels() const { return out_; }

private:
    int in_;
    int out_;
    int k_;
    Parameter weight_; // out x (in * k * k), row-major
    Parameter bias_;
    std::vector<float> cols_;
    int h_ = 0;
    int w_ = 0;
};

/// In-place ReLU helpers; the mask is the forward output itself.
void relu_inplace(Tensor& x);
void relu_backward_inplace(Tensor& grad, const Tensor& activated);

/// 2x2 max pooling (dims must be even). Records argmax for backward.
class MaxPool2 {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out) const;

private:
    std::vector<std::uint32_t> argmax_;
    int in_h_ = 0;
    int in_w_ = 0;
    int channels_ = 0;
};

/// Nearest-neighbour 2x upsampling.
Tensor upsample2(const Tensor& x);
Tensor upsample2_backward(const Tensor& grad_out);

/// Channel concatenation and its split for backward.
Tensor concat(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split(const Tensor& t, int first_channels);

/// Decoupled-weight-decay Adam over a fixed parameter list.
class AdamW {
public:
    AdamW(std::vector<Parameter*> params, double lr, double weight_decay, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8);

    void step();
    void zero_grad();
    long long steps() const { return t_; }

private:
    std::vector<Parameter*> params_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    double lr_;
    double wd_;
    double b1_;
    double b2_;
    double eps_;
    long long t_ = 0;
};

} // namespace railsynth::nn
