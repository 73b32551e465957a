#include "railsynth/segmentation.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "railsynth/errors.hpp"

namespace railsynth {

namespace fs = std::filesystem;

std::vector<std::string> validate_model_config(const ModelConfig& config) {
    std::vector<std::string> v;
    if (config.in_channels != 3 && config.in_channels != 5) v.emplace_back("in_channels must be 3 or 5");
    if (config.base_width < 1) v.emplace_back("base_width must be >= 1");
    if (config.depth < 1 || config.depth > 8) v.emplace_back("depth must be in [1, 8]");
    return v;
}

namespace {

struct Block {
    nn::Conv2d c1;
    nn::Conv2d c2;
    Tensor a1;
    Tensor a2;

    Block(int in, int out, std::mt19937_64& rng) : c1(in, out, 3, rng), c2(out, out, 3, rng) {}

    Tensor forward(const Tensor& x) {
        a1 = c1.forward(x);
        nn::relu_inplace(a1);
        a2 = c2.forward(a1);
        nn::relu_inplace(a2);
        return a2;
    }

    Tensor backward(Tensor g) {
        nn::relu_backward_inplace(g, a2);
        g = c2.backward(g);
        nn::relu_backward_inplace(g, a1);
        return c1.backward(g);
    }

    void collect(std::vector<nn::Parameter*>& out) {
        for (auto* p : c1.parameters()) out.push_back(p);
        for (auto* p : c2.parameters()) out.push_back(p);
    }
};

Tensor pad_edge(const Tensor& x, int h, int w) {
    if (x.height == h && x.width == w) return x;
    Tensor y(x.channels, h, w);
    for (int c = 0; c < x.channels; ++c)
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx)
                y.at(c, yy, xx) = x.at(c, std::min(yy, x.height - 1), std::min(xx, x.width - 1));
    return y;
}

Tensor crop(const Tensor& x, int h, int w) {
    if (x.height == h && x.width == w) return x;
    Tensor y(x.channels, h, w);
    for (int c = 0; c < x.channels; ++c)
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) y.at(c, yy, xx) = x.at(c, yy, xx);
    return y;
}

int round_up(int v, int m) { return (v + m - 1) / m * m; }

} // namespace

struct UNet::Impl {
    std::vector<Block> enc;
    std::vector<nn::MaxPool2> pools;
    std::unique_ptr<Block> bottleneck;
    std::vector<Block> dec;
    std::unique_ptr<nn::Conv2d> head;

    std::vector<int> up_channels;
    Tensor prob_padded;
    // d(prob)/d(logit); zero where the probability is clamped.
    Tensor dprob_padded;
    int in_h = 0;
    int in_w = 0;

    Impl(const ModelConfig& cfg, std::mt19937_64& rng) {
        const int b = cfg.base_width;
        int in = cfg.in_channels;
        for (int i = 0; i < cfg.depth; ++i) {
            enc.emplace_back(in, b << i, rng);
            in = b << i;
        }
        pools.resize(cfg.depth);
        bottleneck = std::make_unique<Block>(in, b << cfg.depth, rng);
        up_channels.resize(cfg.depth);
        for (int i = 0; i < cfg.depth; ++i) {
            up_channels[i] = b << (i + 1);
            dec.emplace_back((b << (i + 1)) + (b << i), b << i, rng);
        }
        head = std::make_unique<nn::Conv2d>(b, 1, 1, rng);
    }

    std::vector<nn::Parameter*> parameters() {
        std::vector<nn::Parameter*> out;
        for (auto& e : enc) e.collect(out);
        bottleneck->collect(out);
        for (auto& d : dec) d.collect(out);
        for (auto* p : head->parameters()) out.push_back(p);
        return out;
    }
};

UNet::UNet(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    if (const auto v = validate_model_config(config); !v.empty()) throw ConfigError("model: " + v.front());
    std::mt19937_64 rng(seed);
    impl_ = std::make_unique<Impl>(config, rng);
}

UNet::~UNet() = default;
UNet::UNet(UNet&&) noexcept = default;
UNet& UNet::operator=(UNet&&) noexcept = default;

Tensor UNet::forward(const InputStack& input) {
    if (input.channels != config_.in_channels)
        throw ValidationError("model expects " + std::to_string(config_.in_channels) + " input channels, got " +
                              std::to_string(input.channels));
    if (input.height < 1 || input.width < 1) throw ValidationError("empty input stack");
    auto& m = *impl_;
    const int mult = 1 << config_.depth;
    m.in_h = input.height;
    m.in_w = input.width;
    Tensor cur = pad_edge(input, round_up(input.height, mult), round_up(input.width, mult));

    std::vector<Tensor> skips(config_.depth);
    for (int i = 0; i < config_.depth; ++i) {
        skips[i] = m.enc[i].forward(cur);
        cur = m.pools[i].forward(skips[i]);
    }
    cur = m.bottleneck->forward(cur);
    for (int i = config_.depth - 1; i >= 0; --i) cur = m.dec[i].forward(nn::concat(nn::upsample2(cur), skips[i]));
    Tensor logits = m.head->forward(cur);

    m.prob_padded = Tensor(1, logits.height, logits.width);
    m.dprob_padded = Tensor(1, logits.height, logits.width);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const float p = 1.0f / (1.0f + std::exp(-logits.data[i]));
        const float c = std::clamp(p, 1e-6f, 1.0f - 1e-6f);
        m.prob_padded.data[i] = c;
        m.dprob_padded.data[i] = c == p ? p * (1.0f - p) : 0.0f;
    }
    return crop(m.prob_padded, input.height, input.width);
}

void UNet::backward(const Tensor& grad_prob) {
    auto& m = *impl_;
    if (grad_prob.height != m.in_h || grad_prob.width != m.in_w || grad_prob.channels != 1)
        throw ValidationError("backward: gradient shape does not match the last forward");
    Tensor g(1, m.prob_padded.height, m.prob_padded.width);
    for (int y = 0; y < m.in_h; ++y)
        for (int x = 0; x < m.in_w; ++x) {
            g.at(0, y, x) = grad_prob.at(0, y, x) * m.dprob_padded.at(0, y, x);
        }
    g = m.head->backward(g);
    std::vector<Tensor> skip_grads(config_.depth);
    for (int i = 0; i < config_.depth; ++i) {
        g = m.dec[i].backward(std::move(g));
        auto [g_up, g_skip] = nn::split(g, m.up_channels[i]);
        skip_grads[i] = std::move(g_skip);
        g = nn::upsample2_backward(g_up);
    }
    g = m.bottleneck->backward(std::move(g));
    for (int i = config_.depth - 1; i >= 0; --i) {
        g = m.pools[i].backward(g);
        for (std::size_t k = 0; k < g.size(); ++k) g.data[k] += skip_grads[i].data[k];
        g = m.enc[i].backward(std::move(g));
    }
}

std::vector<nn::Parameter*> UNet::parameters() { return impl_->parameters(); }

std::vector<float> UNet::flat_weights() const {
    std::vector<float> out;
    for (auto* p : impl_->parameters()) out.insert(out.end(), p->value.begin(), p->value.end());
    return out;
}

void UNet::set_flat_weights(const std::vector<float>& weights) {
    std::size_t offset = 0;
    auto params = impl_->parameters();
    std::size_t total = 0;
    for (auto* p : params) total += p->value.size();
    if (weights.size() != total)
        throw ValidationError("weight count " + std::to_string(weights.size()) + " does not match model (" +
                              std::to_string(total) + ")");
    for (auto* p : params) {
        std::copy(weights.begin() + static_cast<std::ptrdiff_t>(offset),
                  weights.begin() + static_cast<std::ptrdiff_t>(offset + p->value.size()), p->value.begin());
        offset += p->value.size();
    }
}

UNet UNet::clone() const {
    UNet copy(config_, 0);
    copy.set_flat_weights(flat_weights());
    return copy;
}

namespace {

constexpr char kCheckpointMagic[4] = {'R', 'S', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
    out.write(b, 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4] = {};
    in.read(reinterpret_cast<char*>(b), 4);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

} // namespace

void UNet::save(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    const std::string header =
        nlohmann::json{{"in_channels", config_.in_channels}, {"base_width", config_.base_width}, {"depth", config_.depth}}
            .dump();
    out.write(kCheckpointMagic, 4);
    write_u32(out, kCheckpointVersion);
    write_u32(out, static_cast<std::uint32_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    const auto w = flat_weights();
    write_u32(out, static_cast<std::uint32_t>(w.size()));
    for (float f : w) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_u32(out, bits);
    }
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

UNet UNet::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw IoError(path.string() + ": not a checkpoint");
    const std::uint32_t version = read_u32(in);
    if (version != kCheckpointVersion)
        throw VersionError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t header_len = read_u32(in);
    if (!in || header_len > (1u << 20)) throw IoError(path.string() + ": bad checkpoint header");
    std::string header(header_len, '\0');
    in.read(header.data(), header_len);
    ModelConfig cfg;
    try {
        const auto j = nlohmann::json::parse(header);
        cfg.in_channels = j.at("in_channels").get<int>();
        cfg.base_width = j.at("base_width").get<int>();
        cfg.depth = j.at("depth").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": bad checkpoint header: " + e.what());
    }
    UNet model(cfg, 0);
    const std::uint32_t n = read_u32(in);
    std::vector<float> w(n);
    for (auto& f : w) {
        const std::uint32_t bits = read_u32(in);
        std::memcpy(&f, &bits, 4);
    }
    if (!in) throw IoError(path.string() + ": truncated checkpoint");
    model.set_flat_weights(w);
    return model;
}

Tensor forward(UNet& model, const InputStack& stack) { return model.forward(stack); }

double jaccard_loss(const Tensor& pred, const Tensor& target, Tensor* grad) {
    if (!pred.same_shape(target)) throw ValidationError("jaccard_loss: prediction and target shapes differ");
    double inter = 0.0;
    double sum_p = 0.0;
    double sum_t = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += double(pred.data[i]) * target.data[i];
        sum_p += pred.data[i];
        sum_t += target.data[i];
    }
    const double num = inter + kJaccardEps;
    const double den = sum_p + sum_t - inter + kJaccardEps;
    if (grad) {
        *grad = Tensor(pred.channels, pred.height, pred.width);
        // d/dp_i of -(I + eps)/(U + eps), with dI/dp_i = t_i and dU/dp_i = 1 - t_i.
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double t = target.data[i];
            grad->data[i] = static_cast<float>(-(t * den - num * (1.0 - t)) / (den * den));
        }
    }
    return 1.0 - num / den;
}

Tensor mask_to_target(const cv::Mat& mask) {
    CV_Assert(mask.type() == CV_8UC1);
    Tensor t(1, mask.rows, mask.cols);
    for (int y = 0; y < mask.rows; ++y) {
        const auto* row = mask.ptr<std::uint8_t>(y);
        for (int x = 0; x < mask.cols; ++x) t.at(0, y, x) = row[x] ? 1.0f : 0.0f;
    }
    return t;
}

cv::Mat probability_to_mask(const Tensor& prob, double threshold) {
    cv::Mat mask(prob.height, prob.width, CV_8UC1);
    for (int y = 0; y < prob.height; ++y) {
        auto* row = mask.ptr<std::uint8_t>(y);
        for (int x = 0; x < prob.width; ++x) row[x] = prob.at(0, y, x) > threshold ? 255 : 0;
    }
    return mask;
}

cv::Mat predict(UNet& model, const cv::Mat& image, const FlowField* flow, double threshold) {
    const int expected = model.config().in_channels;
    if (flow && expected != 5)
        throw ValidationError("flow channels supplied to a " + std::to_string(expected) + "-channel checkpoint");
    if (!flow && expected == 5) throw ValidationError("checkpoint expects flow channels but no flow was supplied");
    return probability_to_mask(model.forward(fuse_inputs(image, flow)), threshold);
}

} // namespace railsynth
