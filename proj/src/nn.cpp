#include "railsynth/nn.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

namespace railsynth::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Lowers x (C x H x W) into (C*k*k) x (H*W) for a same-padded k x k kernel.
void im2col(const Tensor& x, int k, std::vector<float>& cols) {
    const int pad = k / 2;
    const int h = x.height;
    const int w = x.width;
    cols.assign(static_cast<std::size_t>(x.channels) * k * k * h * w, 0.0f);
    std::size_t row = 0;
    for (int c = 0; c < x.channels; ++c) {
        const float* src = x.data.data() + c * x.plane();
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++row) {
                float* dst = cols.data() + row * h * w;
                const int oy = ky - pad;
                const int ox = kx - pad;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + oy;
                    if (sy < 0 || sy >= h) continue;
                    const int x0 = std::max(0, -ox);
                    const int x1 = std::min(w, w - ox);
                    const float* s = src + sy * w + ox;
                    float* d = dst + y * w;
                    for (int xx = x0; xx < x1; ++xx) d[xx] = s[xx];
                }
            }
        }
    }
}

void col2im(const std::vector<float>& cols, int k, Tensor& grad_in) {
    const int pad = k / 2;
    const int h = grad_in.height;
    const int w = grad_in.width;
    std::size_t row = 0;
    for (int c = 0; c < grad_in.channels; ++c) {
        float* dst = grad_in.data.data() + c * grad_in.plane();
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++row) {
                const float* src = cols.data() + row * h * w;
                const int oy = ky - pad;
                const int ox = kx - pad;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + oy;
                    if (sy < 0 || sy >= h) continue;
                    const int x0 = std::max(0, -ox);
                    const int x1 = std::min(w, w - ox);
                    float* d = dst + sy * w + ox;
                    const float* s = src + y * w;
                    for (int xx = x0; xx < x1; ++xx) d[xx] += s[xx];
                }
            }
        }
    }
}

} // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, std::mt19937_64& rng)
    : in_(in_channels), out_(out_channels), k_(kernel),
      weight_(static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel), bias_(out_channels) {
    if (kernel % 2 == 0) throw std::invalid_argument("Conv2d: kernel must be odd");
    // He initialization for ReLU networks.
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(in_channels * kernel * kernel)));
    for (float& v : weight_.value) v = dist(rng);
}

Tensor Conv2d::forward(const Tensor& x) {
    if (x.channels != in_) throw std::invalid_argument("Conv2d: channel mismatch");
    h_ = x.height;
    w_ = x.width;
    const int hw = h_ * w_;
    const int kk = in_ * k_ * k_;
    Tensor y(out_, h_, w_);
    MapMat out(y.data.data(), out_, hw);
    ConstMapMat wmat(weight_.value.data(), out_, kk);
    if (k_ == 1) {
        cols_ = x.data;
    } else {
        im2col(x, k_, cols_);
    }
    ConstMapMat cols(cols_.data(), kk, hw);
    out.noalias() = wmat * cols;
    for (int o = 0; o < out_; ++o) out.row(o).array() += bias_.value[o];
    return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    const int hw = h_ * w_;
    const int kk = in_ * k_ * k_;
    ConstMapMat g(grad_out.data.data(), out_, hw);
    ConstMapMat cols(cols_.data(), kk, hw);
    MapMat gw(weight_.grad.data(), out_, kk);
    gw.noalias() += g * cols.transpose();
    for (int o = 0; o < out_; ++o) bias_.grad[o] += g.row(o).sum();

    ConstMapMat wmat(weight_.value.data(), out_, kk);
    Tensor grad_in(in_, h_, w_);
    if (k_ == 1) {
        MapMat gi(grad_in.data.data(), in_, hw);
        gi.noalias() = wmat.transpose() * g;
    } else {
        std::vector<float> dcols(static_cast<std::size_t>(kk) * hw);
        MapMat dc(dcols.data(), kk, hw);
        dc.noalias() = wmat.transpose() * g;
        col2im(dcols, k_, grad_in);
    }
    return grad_in;
}

void relu_inplace(Tensor& x) {
    for (float& v : x.data) v = v > 0.0f ? v : 0.0f;
}

void relu_backward_inplace(Tensor& grad, const Tensor& activated) {
    for (std::size_t i = 0; i < grad.data.size(); ++i)
        if (activated.data[i] <= 0.0f) grad.data[i] = 0.0f;
}

Tensor MaxPool2::forward(const Tensor& x) {
    if (x.height % 2 || x.width % 2) throw std::invalid_argument("MaxPool2: odd spatial size");
    channels_ = x.channels;
    in_h_ = x.height;
    in_w_ = x.width;
    Tensor y(x.channels, x.height / 2, x.width / 2);
    argmax_.assign(y.size(), 0);
    std::size_t o = 0;
    for (int c = 0; c < x.channels; ++c)
        for (int yy = 0; yy < y.height; ++yy)
            for (int xx = 0; xx < y.width; ++xx, ++o) {
                std::uint32_t best = static_cast<std::uint32_t>(c * x.plane() + (2 * yy) * x.width + 2 * xx);
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const auto idx = static_cast<std::uint32_t>(c * x.plane() + (2 * yy + dy) * x.width + 2 * xx + dx);
                        if (x.data[idx] > x.data[best]) best = idx;
                    }
                argmax_[o] = best;
                y.data[o] = x.data[best];
            }
    return y;
}

Tensor MaxPool2::backward(const Tensor& grad_out) const {
    Tensor g(channels_, in_h_, in_w_);
    for (std::size_t o = 0; o < grad_out.size(); ++o) g.data[argmax_[o]] += grad_out.data[o];
    return g;
}

Tensor upsample2(const Tensor& x) {
    Tensor y(x.channels, x.height * 2, x.width * 2);
    for (int c = 0; c < x.channels; ++c)
        for (int yy = 0; yy < y.height; ++yy)
            for (int xx = 0; xx < y.width; ++xx) y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
    return y;
}

Tensor upsample2_backward(const Tensor& grad_out) {
    Tensor g(grad_out.channels, grad_out.height / 2, grad_out.width / 2);
    for (int c = 0; c < grad_out.channels; ++c)
        for (int yy = 0; yy < grad_out.height; ++yy)
            for (int xx = 0; xx < grad_out.width; ++xx) g.at(c, yy / 2, xx / 2) += grad_out.at(c, yy, xx);
    return g;
}

Tensor concat(const Tensor& a, const Tensor& b) {
    if (a.height != b.height || a.width != b.width) throw std::invalid_argument("concat: spatial mismatch");
    Tensor y(a.channels + b.channels, a.height, a.width);
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
    return y;
}

std::pair<Tensor, Tensor> split(const Tensor& t, int first_channels) {
    Tensor a(first_channels, t.height, t.width);
    Tensor b(t.channels - first_channels, t.height, t.width);
    std::copy(t.data.begin(), t.data.begin() + static_cast<std::ptrdiff_t>(a.size()), a.data.begin());
    std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(a.size()), t.data.end(), b.data.begin());
    return {std::move(a), std::move(b)};
}

AdamW::AdamW(std::vector<Parameter*> params, double lr, double weight_decay, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto* p : params_) {
        m_.emplace_back(p->value.size(), 0.0f);
        v_.emplace_back(p->value.size(), 0.0f);
    }
}

void AdamW::zero_grad() {
    for (auto* p : params_) p->zero_grad();
}

void AdamW::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double g = p.grad[j];
            m[j] = static_cast<float>(b1_ * m[j] + (1.0 - b1_) * g);
            v[j] = static_cast<float>(b2_ * v[j] + (1.0 - b2_) * g * g);
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            p.value[j] -= static_cast<float>(lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p.value[j]));
        }
    }
}

} // namespace railsynth::nn
