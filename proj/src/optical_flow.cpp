#include "railsynth/optical_flow.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include <opencv2/imgproc.hpp>

#include "railsynth/errors.hpp"
#include "railsynth/image_io.hpp"

namespace railsynth {

namespace fs = std::filesystem;
using nlohmann::json;

FlowField FlowField::zeros(cv::Size size) {
    return {cv::Mat::zeros(size, CV_32FC1), cv::Mat::zeros(size, CV_32FC1)};
}

std::vector<std::string> validate_flow_params(const FlowSolverParams& params) {
    std::vector<std::string> v;
    if (!(params.smoothness_weight > 0.0)) v.emplace_back("smoothness_weight must be > 0");
    if (params.iterations < 1) v.emplace_back("iterations must be >= 1");
    if (params.pyramid_levels < 1) v.emplace_back("pyramid_levels must be >= 1");
    return v;
}

int effective_pyramid_levels(cv::Size frame, int requested) {
    int levels = std::max(1, requested);
    const int short_side = std::min(frame.width, frame.height);
    while (levels > 1 && (short_side >> (levels - 1)) < kMinPyramidSide) --levels;
    return levels;
}

namespace {

constexpr int kWarpsPerLevel = 4;

cv::Mat luminance(const cv::Mat& bgr) {
    cv::Mat lum(bgr.size(), CV_32FC1);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* src = bgr.ptr<cv::Vec3b>(y);
        auto* dst = lum.ptr<float>(y);
        for (int x = 0; x < bgr.cols; ++x)
            dst[x] = (0.114f * src[x][0] + 0.587f * src[x][1] + 0.299f * src[x][2]) / 255.0f;
    }
    return lum;
}

inline float sample_clamped(const cv::Mat& img, int y, int x) {
    return img.at<float>(std::clamp(y, 0, img.rows - 1), std::clamp(x, 0, img.cols - 1));
}

// Bilinear lookup of img at (x + u, y + v), replicating the border.
cv::Mat warp(const cv::Mat& img, const cv::Mat& u, const cv::Mat& v) {
    cv::Mat out(img.size(), CV_32FC1);
    for (int y = 0; y < img.rows; ++y) {
        const float* ur = u.ptr<float>(y);
        const float* vr = v.ptr<float>(y);
        float* dst = out.ptr<float>(y);
        for (int x = 0; x < img.cols; ++x) {
            const float sx = std::clamp(x + ur[x], 0.0f, static_cast<float>(img.cols - 1));
            const float sy = std::clamp(y + vr[x], 0.0f, static_cast<float>(img.rows - 1));
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const float fx = sx - x0;
            const float fy = sy - y0;
            const float a = sample_clamped(img, y0, x0);
            const float b = sample_clamped(img, y0, x0 + 1);
            const float c = sample_clamped(img, y0 + 1, x0);
            const float d = sample_clamped(img, y0 + 1, x0 + 1);
            dst[x] = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
        }
    }
    return out;
}

// Five-point central difference (-1, 8, 0, -8, 1) / 12.
void gradients(const cv::Mat& img, cv::Mat& gx, cv::Mat& gy) {
    gx.create(img.size(), CV_32FC1);
    gy.create(img.size(), CV_32FC1);
    for (int y = 0; y < img.rows; ++y) {
        for (int x = 0; x < img.cols; ++x) {
            gx.at<float>(y, x) = (sample_clamped(img, y, x - 2) - 8 * sample_clamped(img, y, x - 1) +
                                  8 * sample_clamped(img, y, x + 1) - sample_clamped(img, y, x + 2)) /
                                 12.0f;
            gy.at<float>(y, x) = (sample_clamped(img, y - 2, x) - 8 * sample_clamped(img, y - 1, x) +
                                  8 * sample_clamped(img, y + 1, x) - sample_clamped(img, y + 2, x)) /
                                 12.0f;
        }
    }
}

// Mean of the 4-neighbourhood with replicated borders.
void neighbour_mean(const cv::Mat& f, cv::Mat& out) {
    out.create(f.size(), CV_32FC1);
    const int rows = f.rows;
    const int cols = f.cols;
    for (int y = 0; y < rows; ++y) {
        const float* up = f.ptr<float>(std::max(y - 1, 0));
        const float* mid = f.ptr<float>(y);
        const float* down = f.ptr<float>(std::min(y + 1, rows - 1));
        float* dst = out.ptr<float>(y);
        for (int x = 0; x < cols; ++x)
            dst[x] = 0.25f * (up[x] + down[x] + mid[std::max(x - 1, 0)] + mid[std::min(x + 1, cols - 1)]);
    }
}

void solve_level(const cv::Mat& i0, const cv::Mat& i1, cv::Mat& u, cv::Mat& v, float lambda, int iterations) {
    const cv::Mat i1w = warp(i1, u, v);
    cv::Mat gx0, gy0, gx1, gy1;
    gradients(i0, gx0, gy0);
    gradients(i1w, gx1, gy1);
    const cv::Mat ix = 0.5f * (gx0 + gx1);
    const cv::Mat iy = 0.5f * (gy0 + gy1);
    const cv::Mat it = i1w - i0;
    // Expressing the weight relative to the mean squared gradient makes the
    // balance between data and smoothness independent of image contrast.
    const double energy = cv::mean(ix.mul(ix) + iy.mul(iy))[0];
    if (energy > 0.0) lambda *= static_cast<float>(energy);
    else lambda = 1.0f;
    const cv::Mat u0 = u.clone();
    const cv::Mat v0 = v.clone();

    cv::Mat ubar, vbar;
    for (int k = 0; k < iterations; ++k) {
        neighbour_mean(u, ubar);
        neighbour_mean(v, vbar);
        for (int y = 0; y < u.rows; ++y) {
            const float* gx = ix.ptr<float>(y);
            const float* gy = iy.ptr<float>(y);
            const float* gt = it.ptr<float>(y);
            const float* ub = ubar.ptr<float>(y);
            const float* vb = vbar.ptr<float>(y);
            const float* ui = u0.ptr<float>(y);
            const float* vi = v0.ptr<float>(y);
            float* uo = u.ptr<float>(y);
            float* vo = v.ptr<float>(y);
            for (int x = 0; x < u.cols; ++x) {
                const float r = gx[x] * (ub[x] - ui[x]) + gy[x] * (vb[x] - vi[x]) + gt[x];
                const float scale = r / (lambda + gx[x] * gx[x] + gy[x] * gy[x]);
                uo[x] = ub[x] - gx[x] * scale;
                vo[x] = vb[x] - gy[x] * scale;
            }
        }
    }
}

} // namespace

FlowField estimate_flow(const cv::Mat& frame_t, const cv::Mat& frame_t1, const FlowSolverParams& params) {
    if (frame_t.size() != frame_t1.size()) throw ValidationError("estimate_flow: frame dimensions differ");
    if (frame_t.type() != CV_8UC3 || frame_t1.type() != CV_8UC3)
        throw ValidationError("estimate_flow: frames must be 8-bit 3-channel");
    if (const auto v = validate_flow_params(params); !v.empty()) throw ValidationError("estimate_flow: " + v.front());

    const int levels = effective_pyramid_levels(frame_t.size(), params.pyramid_levels);
    std::vector<cv::Mat> pyr0{luminance(frame_t)};
    std::vector<cv::Mat> pyr1{luminance(frame_t1)};
    for (int l = 1; l < levels; ++l) {
        cv::Mat a, b;
        cv::pyrDown(pyr0.back(), a);
        cv::pyrDown(pyr1.back(), b);
        pyr0.push_back(a);
        pyr1.push_back(b);
    }

    const float lambda = static_cast<float>(params.smoothness_weight);
    cv::Mat u = cv::Mat::zeros(pyr0.back().size(), CV_32FC1);
    cv::Mat v = cv::Mat::zeros(pyr0.back().size(), CV_32FC1);
    for (int l = levels - 1; l >= 0; --l) {
        const cv::Size size = pyr0[l].size();
        if (u.size() != size) {
            const double sx = static_cast<double>(size.width) / u.cols;
            const double sy = static_cast<double>(size.height) / u.rows;
            cv::Mat uu, vv;
            cv::resize(u, uu, size, 0, 0, cv::INTER_LINEAR);
            cv::resize(v, vv, size, 0, 0, cv::INTER_LINEAR);
            u = uu * sx;
            v = vv * sy;
        }
        // Re-linearize a few times per level; the median pass between warps
        // suppresses outliers from occluded pixels before they get warped in.
        const int warps = std::min(kWarpsPerLevel, params.iterations);
        for (int k = 0; k < warps; ++k) {
            const int sweeps = params.iterations / warps + (k < params.iterations % warps ? 1 : 0);
            solve_level(pyr0[l], pyr1[l], u, v, lambda, sweeps);
            cv::medianBlur(u, u, 5);
            cv::medianBlur(v, v, 5);
        }
    }
    return {u, v};
}

void check_flow(const FlowField& flow, cv::Size expected, const std::string& origin) {
    if (flow.dx.size() != expected || flow.dy.size() != expected)
        throw PluginError(origin + ": flow is " + std::to_string(flow.dx.cols) + "x" + std::to_string(flow.dx.rows) +
                          ", expected " + std::to_string(expected.width) + "x" + std::to_string(expected.height));
    for (int y = 0; y < expected.height; ++y)
        for (int x = 0; x < expected.width; ++x)
            if (!std::isfinite(flow.dx.at<float>(y, x)) || !std::isfinite(flow.dy.at<float>(y, x)))
                throw PluginError(origin + ": non-finite flow at pixel (x=" + std::to_string(x) +
                                  ", y=" + std::to_string(y) + ")");
}

FlowField external_flow(const cv::Mat& frame_t, const cv::Mat& frame_t1, PluginProcess& plugin,
                        const fs::path& scratch_dir) {
    if (frame_t.size() != frame_t1.size()) throw ValidationError("external_flow: frame dimensions differ");
    fs::create_directories(scratch_dir);
    const fs::path p0 = fs::absolute(scratch_dir / "flow_frame_t.png");
    const fs::path p1 = fs::absolute(scratch_dir / "flow_frame_t1.png");
    write_png(p0, frame_t);
    write_png(p1, frame_t1);
    const json resp = plugin.request({{"op", "flow"}, {"frame_t", p0.string()}, {"frame_t1", p1.string()}});
    if (!resp.contains("flow") || !resp["flow"].is_string())
        throw PluginError("plugin '" + plugin.command() + "': response lacks a 'flow' path");
    FlowField flow;
    try {
        flow = read_flow(resp["flow"].get<std::string>());
    } catch (const Error& e) {
        throw PluginError("plugin '" + plugin.command() + "': " + e.what());
    }
    check_flow(flow, frame_t.size(), "plugin '" + plugin.command() + "'");
    return flow;
}

FlowField external_flow(const cv::Mat& frame_t, const cv::Mat& frame_t1, const std::string& plugin_command,
                        const fs::path& scratch_dir, std::chrono::milliseconds timeout) {
    PluginProcess plugin(plugin_command, timeout);
    return external_flow(frame_t, frame_t1, plugin, scratch_dir);
}

cv::Mat flow_magnitude_mask(const FlowField& flow, double threshold) {
    if (!(threshold > 0.0)) throw ValidationError("flow_magnitude_mask: threshold must be > 0");
    cv::Mat mask(flow.size(), CV_8UC1);
    for (int y = 0; y < mask.rows; ++y) {
        const float* dx = flow.dx.ptr<float>(y);
        const float* dy = flow.dy.ptr<float>(y);
        auto* m = mask.ptr<std::uint8_t>(y);
        for (int x = 0; x < mask.cols; ++x)
            m[x] = std::sqrt(double(dx[x]) * dx[x] + double(dy[x]) * dy[x]) > threshold ? 255 : 0;
    }
    return mask;
}

FlowField hflip_flow(const FlowField& flow) {
    FlowField out;
    cv::flip(flow.dx, out.dx, 1);
    cv::flip(flow.dy, out.dy, 1);
    out.dx = -out.dx;
    return out;
}

InputStack fuse_inputs(const cv::Mat& image, const FlowField* flow) {
    if (image.empty() || image.type() != CV_8UC3) throw ValidationError("fuse_inputs: image must be 8-bit 3-channel");
    if (flow && (flow->dx.size() != image.size() || flow->dy.size() != image.size()))
        throw ValidationError("fuse_inputs: flow and image dimensions differ");
    InputStack stack(flow ? 5 : 3, image.rows, image.cols);
    for (int y = 0; y < image.rows; ++y) {
        const auto* px = image.ptr<cv::Vec3b>(y);
        for (int x = 0; x < image.cols; ++x) {
            // OpenCV stores BGR; the stack is RGB.
            stack.at(0, y, x) = px[x][2] / 255.0f;
            stack.at(1, y, x) = px[x][1] / 255.0f;
            stack.at(2, y, x) = px[x][0] / 255.0f;
        }
    }
    if (flow) {
        for (int y = 0; y < image.rows; ++y) {
            const float* dx = flow->dx.ptr<float>(y);
            const float* dy = flow->dy.ptr<float>(y);
            for (int x = 0; x < image.cols; ++x) {
                stack.at(3, y, x) = std::clamp(dx[x], -kFlowClamp, kFlowClamp) / kFlowClamp;
                stack.at(4, y, x) = std::clamp(dy[x], -kFlowClamp, kFlowClamp) / kFlowClamp;
            }
        }
    }
    return stack;
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b{char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
    out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
    std::array<unsigned char, 4> b{};
    in.read(reinterpret_cast<char*>(b.data()), 4);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

void put_f32(std::ostream& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

float get_f32(std::istream& in) {
    const std::uint32_t bits = get_u32(in);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

} // namespace

void write_flow(const fs::path& path, const FlowField& flow) {
    if (flow.dx.type() != CV_32FC1 || flow.dy.type() != CV_32FC1 || flow.dx.size() != flow.dy.size())
        throw ValidationError("write_flow: malformed flow field");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write flow file " + path.string());
    out.write("RSFL", 4);
    put_u32(out, static_cast<std::uint32_t>(flow.dx.rows));
    put_u32(out, static_cast<std::uint32_t>(flow.dx.cols));
    for (int y = 0; y < flow.dx.rows; ++y)
        for (int x = 0; x < flow.dx.cols; ++x) {
            put_f32(out, flow.dx.at<float>(y, x));
            put_f32(out, flow.dy.at<float>(y, x));
        }
    if (!out) throw IoError("failed writing flow file " + path.string());
}

FlowField read_flow(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read flow file " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "RSFL", 4) != 0) throw IoError(path.string() + ": bad flow magic");
    const std::uint32_t h = get_u32(in);
    const std::uint32_t w = get_u32(in);
    if (!in || h == 0 || w == 0 || h > 1u << 15 || w > 1u << 15)
        throw IoError(path.string() + ": bad flow header");
    FlowField flow = FlowField::zeros({static_cast<int>(w), static_cast<int>(h)});
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            flow.dx.at<float>(int(y), int(x)) = get_f32(in);
            flow.dy.at<float>(int(y), int(x)) = get_f32(in);
        }
    if (!in) throw IoError(path.string() + ": truncated flow payload");
    return flow;
}

} // namespace railsynth
