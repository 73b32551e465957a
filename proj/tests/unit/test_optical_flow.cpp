#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>
#include <opencv2/imgproc.hpp>

#include "railsynth/errors.hpp"
#include "railsynth/optical_flow.hpp"
#include "test_util.hpp"

using namespace railsynth;
using tu::TempDir;

namespace {

cv::Mat smooth_texture(int h, int w, std::uint64_t seed) {
    cv::Mat noise(h, w, CV_8UC3);
    cv::RNG(seed).fill(noise, cv::RNG::UNIFORM, 0, 256);
    cv::Mat out;
    cv::GaussianBlur(noise, out, {0, 0}, 2.0);
    cv::normalize(out, out, 0, 255, cv::NORM_MINMAX);
    return out;
}

// Circular shift: content at (x, y) moves to (x + dx, y + dy).
cv::Mat roll(const cv::Mat& img, int dx, int dy) {
    cv::Mat out(img.size(), img.type());
    for (int y = 0; y < img.rows; ++y)
        for (int x = 0; x < img.cols; ++x)
            out.at<cv::Vec3b>((y + dy + img.rows) % img.rows, (x + dx + img.cols) % img.cols) = img.at<cv::Vec3b>(y, x);
    return out;
}

double interior_mean(const cv::Mat& m, int border) {
    return cv::mean(m(cv::Rect(border, border, m.cols - 2 * border, m.rows - 2 * border)))[0];
}

double median_epe(const FlowField& f, double dx, double dy, int border) {
    std::vector<double> e;
    for (int y = border; y < f.dx.rows - border; ++y)
        for (int x = border; x < f.dx.cols - border; ++x)
            e.push_back(std::hypot(f.dx.at<float>(y, x) - dx, f.dy.at<float>(y, x) - dy));
    std::nth_element(e.begin(), e.begin() + e.size() / 2, e.end());
    return e[e.size() / 2];
}

} // namespace

TEST(EstimateFlow, IdenticalFramesGiveZeroFlow) {
    const cv::Mat f = smooth_texture(48, 64, 1);
    const FlowField flow = estimate_flow(f, f);
    double lo, hi;
    cv::minMaxLoc(cv::abs(flow.dx), &lo, &hi);
    EXPECT_LT(hi, 1e-3);
    cv::minMaxLoc(cv::abs(flow.dy), &lo, &hi);
    EXPECT_LT(hi, 1e-3);
}

TEST(EstimateFlow, DiagonalTranslationRecovered) {
    const cv::Mat f = smooth_texture(96, 96, 2);
    const FlowField flow = estimate_flow(f, roll(f, 5, 5));
    EXPECT_NEAR(interior_mean(flow.dx, 16), 5.0, 1.0);
    EXPECT_NEAR(interior_mean(flow.dy, 16), 5.0, 1.0);
}

TEST(EstimateFlow, PyramidNeededForLargeMotion) {
    const cv::Mat f = smooth_texture(128, 128, 3);
    const cv::Mat g = roll(f, 10, 0);
    FlowSolverParams single;
    single.pyramid_levels = 1;
    const double u1 = interior_mean(estimate_flow(f, g, single).dx, 20);
    const double u4 = interior_mean(estimate_flow(f, g).dx, 20);
    EXPECT_NEAR(u4, 10.0, 1.0);
    EXPECT_LT(u1, u4);
}

TEST(EstimateFlow, WrapAroundShiftMedianErrorBelowOnePixel) {
    const cv::Mat f = smooth_texture(96, 128, 4);
    EXPECT_LT(median_epe(estimate_flow(f, roll(f, 3, -2)), 3, -2, 12), 1.0);
}

TEST(EstimateFlow, OutputShapeAndType) {
    const cv::Mat f = smooth_texture(37, 53, 5);
    const FlowField flow = estimate_flow(f, roll(f, 1, 1));
    EXPECT_EQ(flow.size(), f.size());
    EXPECT_EQ(flow.dx.type(), CV_32FC1);
    EXPECT_EQ(flow.dy.type(), CV_32FC1);
}

TEST(EstimateFlow, MismatchedFramesRejected) {
    EXPECT_THROW(estimate_flow(smooth_texture(32, 32, 1), smooth_texture(32, 40, 1)), ValidationError);
}

TEST(EstimateFlow, InvalidParamsRejected) {
    FlowSolverParams p;
    p.smoothness_weight = 0;
    EXPECT_FALSE(validate_flow_params(p).empty());
    p = {};
    p.iterations = 0;
    EXPECT_FALSE(validate_flow_params(p).empty());
    p = {};
    p.pyramid_levels = 0;
    EXPECT_FALSE(validate_flow_params(p).empty());
    EXPECT_TRUE(validate_flow_params({}).empty());
}

TEST(EstimateFlow, PyramidLevelsReducedForSmallFrames) {
    EXPECT_EQ(effective_pyramid_levels({128, 128}, 4), 4);
    EXPECT_EQ(effective_pyramid_levels({80, 64}, 4), 3);
    EXPECT_EQ(effective_pyramid_levels({20, 20}, 4), 1);
}

TEST(ExternalFlow, ZeroStubPassesThrough) {
    TempDir dir;
    const cv::Mat f = smooth_texture(20, 30, 1);
    const FlowField flow = external_flow(f, f, std::string(STUB_PLUGIN) + " zero", dir.path());
    EXPECT_EQ(flow.size(), f.size());
    EXPECT_EQ(cv::countNonZero(flow.dx), 0);
}

TEST(ExternalFlow, ConstantStubValuesRead) {
    TempDir dir;
    const cv::Mat f = smooth_texture(20, 30, 1);
    const FlowField flow = external_flow(f, f, std::string(STUB_PLUGIN) + " const 1.5 -2", dir.path());
    EXPECT_FLOAT_EQ(flow.dx.at<float>(7, 9), 1.5f);
    EXPECT_FLOAT_EQ(flow.dy.at<float>(19, 29), -2.0f);
}

TEST(ExternalFlow, NaNNamesPixel) {
    TempDir dir;
    const cv::Mat f = smooth_texture(20, 30, 1);
    try {
        external_flow(f, f, std::string(STUB_PLUGIN) + " nan", dir.path());
        FAIL() << "expected PluginError";
    } catch (const PluginError& e) {
        EXPECT_NE(std::string(e.what()).find("(x=3, y=2)"), std::string::npos) << e.what();
    }
}

TEST(ExternalFlow, SizeMismatchRejected) {
    TempDir dir;
    const cv::Mat f = smooth_texture(20, 30, 1);
    EXPECT_THROW(external_flow(f, f, std::string(STUB_PLUGIN) + " mismatch", dir.path()), PluginError);
}

TEST(ExternalFlow, TimeoutKillsPlugin) {
    TempDir dir;
    const cv::Mat f = smooth_texture(20, 30, 1);
    const auto start = std::chrono::steady_clock::now();
    EXPECT_THROW(external_flow(f, f, std::string(STUB_PLUGIN) + " sleep", dir.path(), std::chrono::milliseconds(300)),
                 PluginError);
    EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(10));
}

TEST(ExternalFlow, ErrorResponseAndGarbageRejected) {
    TempDir dir;
    const cv::Mat f = smooth_texture(20, 30, 1);
    EXPECT_THROW(external_flow(f, f, std::string(STUB_PLUGIN) + " error", dir.path()), PluginError);
    EXPECT_THROW(external_flow(f, f, std::string(STUB_PLUGIN) + " garbage", dir.path()), PluginError);
}

TEST(ExternalFlow, MissingExecutableRejected) {
    TempDir dir;
    const cv::Mat f = smooth_texture(20, 30, 1);
    EXPECT_THROW(external_flow(f, f, (dir / "no_such_plugin").string(), dir.path()), PluginError);
}

TEST(MagnitudeMask, ThresholdIsStrict) {
    FlowField f = FlowField::zeros({4, 1});
    f.dx.at<float>(0, 0) = 3;
    f.dy.at<float>(0, 0) = 4;  // 5
    f.dx.at<float>(0, 1) = 2;  // exactly 2
    f.dy.at<float>(0, 2) = -2.5f;
    const cv::Mat m = flow_magnitude_mask(f, 2.0);
    EXPECT_EQ(m.at<uchar>(0, 0), 255);
    EXPECT_EQ(m.at<uchar>(0, 1), 0);
    EXPECT_EQ(m.at<uchar>(0, 2), 255);
    EXPECT_EQ(m.at<uchar>(0, 3), 0);
    EXPECT_THROW(flow_magnitude_mask(f, 0.0), ValidationError);
}

TEST(FuseInputs, RgbOnlyHasThreeChannelsInUnitRange) {
    cv::Mat img(2, 2, CV_8UC3, cv::Scalar(0, 128, 255));  // BGR
    const InputStack s = fuse_inputs(img, nullptr);
    EXPECT_EQ(s.channels, 3);
    EXPECT_FLOAT_EQ(s.at(0, 0, 0), 1.0f);
    EXPECT_FLOAT_EQ(s.at(1, 1, 1), 128.0f / 255.0f);
    EXPECT_FLOAT_EQ(s.at(2, 0, 1), 0.0f);
}

TEST(FuseInputs, FlowChannelsClampedAndScaled) {
    cv::Mat img(1, 3, CV_8UC3, cv::Scalar::all(0));
    FlowField f = FlowField::zeros({3, 1});
    f.dx.at<float>(0, 0) = 8;
    f.dx.at<float>(0, 1) = 40;
    f.dy.at<float>(0, 2) = -100;
    const InputStack s = fuse_inputs(img, &f);
    ASSERT_EQ(s.channels, 5);
    EXPECT_FLOAT_EQ(s.at(3, 0, 0), 0.5f);
    EXPECT_FLOAT_EQ(s.at(3, 0, 1), 1.0f);
    EXPECT_FLOAT_EQ(s.at(4, 0, 2), -1.0f);
    EXPECT_FLOAT_EQ(s.at(4, 0, 0), 0.0f);
}

TEST(FuseInputs, FlowSizeMismatchRejected) {
    cv::Mat img(4, 4, CV_8UC3, cv::Scalar::all(0));
    const FlowField f = FlowField::zeros({5, 4});
    EXPECT_THROW(fuse_inputs(img, &f), ValidationError);
}

TEST(FlowFile, RoundTripIsExact) {
    TempDir dir;
    FlowField f = FlowField::zeros({7, 5});
    cv::RNG(3).fill(f.dx, cv::RNG::NORMAL, 0, 4);
    cv::RNG(4).fill(f.dy, cv::RNG::NORMAL, 0, 4);
    write_flow(dir / "a.rsfl", f);
    const FlowField g = read_flow(dir / "a.rsfl");
    EXPECT_TRUE(tu::mats_equal(f.dx, g.dx));
    EXPECT_TRUE(tu::mats_equal(f.dy, g.dy));
    EXPECT_EQ(std::filesystem::file_size(dir / "a.rsfl"), 4u + 8u + 7u * 5u * 8u);
}

TEST(FlowFile, TruncatedOrBadMagicRejected) {
    TempDir dir;
    write_flow(dir / "a.rsfl", FlowField::zeros({4, 4}));
    std::filesystem::resize_file(dir / "a.rsfl", 20);
    EXPECT_THROW(read_flow(dir / "a.rsfl"), Error);
    {
        std::ofstream out(dir / "b.rsfl", std::ios::binary);
        out << "NOPE12345678";
    }
    EXPECT_THROW(read_flow(dir / "b.rsfl"), Error);
    EXPECT_THROW(read_flow(dir / "missing.rsfl"), Error);
}

TEST(HflipFlow, MirrorsAndNegatesDx) {
    FlowField f = FlowField::zeros({3, 1});
    f.dx.at<float>(0, 0) = 2;
    f.dy.at<float>(0, 0) = 5;
    const FlowField g = hflip_flow(f);
    EXPECT_FLOAT_EQ(g.dx.at<float>(0, 2), -2.0f);
    EXPECT_FLOAT_EQ(g.dy.at<float>(0, 2), 5.0f);
    EXPECT_FLOAT_EQ(g.dx.at<float>(0, 0), 0.0f);
}
