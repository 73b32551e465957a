#include <map>

#include <gtest/gtest.h>
#include <opencv2/imgproc.hpp>

#include "railsynth/compositor.hpp"
#include "railsynth/errors.hpp"
#include "railsynth/image_io.hpp"
#include "railsynth/manifest.hpp"
#include "railsynth/synthesis.hpp"
#include "test_util.hpp"

using namespace railsynth;
using tu::TempDir;

namespace {

ObjectCutout noise_cutout(int h, int w, std::uint64_t seed) {
    ObjectCutout c = tu::solid_cutout(h, w);
    cv::RNG rng(seed);
    rng.fill(c.patch, cv::RNG::UNIFORM, 0, 256);
    return c;
}

// Per-pixel reference paste.
PasteResult brute_paste(const BaseScene& s, const ObjectCutout& c, cv::Point anchor) {
    PasteResult r{s.image.clone(), s.railway_mask.clone(), cv::Mat::zeros(s.image.size(), CV_8UC1)};
    const int left = anchor.x - c.patch.cols / 2;
    const int top = anchor.y - c.patch.rows + 1;
    for (int v = 0; v < c.patch.rows; ++v)
        for (int u = 0; u < c.patch.cols; ++u) {
            const int x = left + u, y = top + v;
            if (x < 0 || y < 0 || x >= s.image.cols || y >= s.image.rows || !c.alpha.at<uchar>(v, u)) continue;
            r.image.at<cv::Vec3b>(y, x) = c.patch.at<cv::Vec3b>(v, u);
            r.footprint.at<uchar>(y, x) = 255;
            r.visible_railway.at<uchar>(y, x) = 0;
        }
    return r;
}

bool ray_cast_inside(const std::vector<cv::Point2d>& v, cv::Point2d p) {
    bool inside = false;
    for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
        if ((v[i].y > p.y) != (v[j].y > p.y) && p.x < (v[j].x - v[i].x) * (p.y - v[i].y) / (v[j].y - v[i].y) + v[i].x)
            inside = !inside;
    }
    return inside;
}

cv::Mat texture_image(std::uint64_t seed) {
    cv::Mat t(40, 40, CV_8UC3);
    cv::RNG(seed).fill(t, cv::RNG::UNIFORM, 0, 256);
    return t;
}

} // namespace

TEST(Rescale, DefaultConstantsAtRow100) {
    const ObjectCutout out = rescale_cutout(tu::solid_cutout(200, 100), 100, {0.6, 30});
    EXPECT_EQ(out.patch.rows, 90);
    EXPECT_EQ(out.patch.cols, 45);
    EXPECT_EQ(out.alpha.size(), out.patch.size());
}

TEST(Rescale, RowZeroGivesBeta) {
    EXPECT_EQ(rescale_cutout(tu::solid_cutout(200, 100), 0, {0.6, 30}).patch.rows, 30);
}

TEST(Rescale, SquareStaysSquare) {
    for (int y : {0, 13, 77, 250, 431}) {
        const ObjectCutout out = rescale_cutout(tu::solid_cutout(50, 50), y, {0.6, 30});
        EXPECT_EQ(out.patch.rows, out.patch.cols) << y;
    }
}

TEST(Rescale, HeightIsMonotoneInAnchorRow) {
    const ObjectCutout c = tu::solid_cutout(60, 25);
    int prev = 0;
    for (int y = 0; y < 400; ++y) {
        const int h = rescale_cutout(c, y, {0.37, 9}).patch.rows;
        EXPECT_GE(h, prev);
        prev = h;
    }
}

TEST(Rescale, BelowMinimumHeightThrows) {
    EXPECT_THROW(rescale_cutout(tu::solid_cutout(20, 20), 2, {0.5, 5}), ObjectTooSmall);
}

TEST(Rescale, AlphaStaysBinary) {
    ObjectCutout c = noise_cutout(64, 48, 3);
    cv::circle(c.alpha, {24, 32}, 10, cv::Scalar(0), cv::FILLED);
    const ObjectCutout out = rescale_cutout(c, 40, {0.5, 10});
    for (auto it = out.alpha.begin<uchar>(); it != out.alpha.end<uchar>(); ++it) EXPECT_TRUE(*it == 0 || *it == 255);
}

TEST(Paste, FootprintMissingRailwayLeavesMaskUnchanged) {
    const BaseScene s = tu::small_scene();
    const PasteResult r = paste(s, tu::solid_cutout(5, 5), {5, 10});
    EXPECT_TRUE(tu::mats_equal(r.visible_railway, s.railway_mask));
}

TEST(Paste, OpaqueTenByTenRemovesExactly100RailwayPixels) {
    const BaseScene s = tu::small_scene();
    const PasteResult r = paste(s, tu::solid_cutout(10, 10), {40, 45});
    EXPECT_EQ(cv::countNonZero(s.railway_mask) - cv::countNonZero(r.visible_railway), 100);
}

TEST(Paste, HalfOutsideLeftEdgeMatchesBruteForce) {
    const BaseScene s = tu::small_scene(7);
    const ObjectCutout c = noise_cutout(12, 16, 9);
    const cv::Point anchor(0, 30);
    const PasteResult r = paste(s, c, anchor);
    const PasteResult ref = brute_paste(s, c, anchor);
    EXPECT_TRUE(tu::mats_equal(r.image, ref.image));
    EXPECT_TRUE(tu::mats_equal(r.footprint, ref.footprint));
    EXPECT_TRUE(tu::mats_equal(r.visible_railway, ref.visible_railway));
    EXPECT_EQ(cv::countNonZero(r.footprint), 12 * 8);
}

TEST(Paste, IrregularAlphaMatchesBruteForceEverywhere) {
    const BaseScene s = tu::small_scene(2);
    ObjectCutout c = noise_cutout(15, 11, 4);
    cv::RNG(5).fill(c.alpha, cv::RNG::UNIFORM, 0, 2);
    c.alpha = binarize(c.alpha, 1);
    for (cv::Point a : {cv::Point(40, 40), cv::Point(78, 59), cv::Point(3, 5), cv::Point(79, 70)}) {
        const PasteResult r = paste(s, c, a);
        const PasteResult ref = brute_paste(s, c, a);
        EXPECT_TRUE(tu::mats_equal(r.image, ref.image));
        EXPECT_TRUE(tu::mats_equal(r.visible_railway, ref.visible_railway));
    }
}

TEST(Paste, FullyOutsideFrameThrows) {
    EXPECT_THROW(paste(tu::small_scene(), tu::solid_cutout(5, 5), {-20, 30}), PlacementOutOfFrame);
}

TEST(Paste, FeatherKeepsMasksExact) {
    const BaseScene s = tu::small_scene();
    const ObjectCutout c = noise_cutout(9, 9, 1);
    const PasteResult hard = paste(s, c, {40, 40});
    const PasteResult soft = paste(s, c, {40, 40}, true);
    EXPECT_TRUE(tu::mats_equal(hard.visible_railway, soft.visible_railway));
    EXPECT_TRUE(tu::mats_equal(hard.footprint, soft.footprint));
}

TEST(TexturedPolygon, SameSeedIsBitIdentical) {
    const cv::Mat tex = texture_image(1);
    Rng a(42), b(42);
    const ObjectCutout x = random_textured_polygon(tex, a);
    const ObjectCutout y = random_textured_polygon(tex, b);
    EXPECT_TRUE(tu::mats_equal(x.patch, y.patch));
    EXPECT_TRUE(tu::mats_equal(x.alpha, y.alpha));
    EXPECT_EQ(x.category, Category::texture);
}

TEST(TexturedPolygon, VertexCountWithinThreeToEight) {
    Rng rng(1);
    std::map<std::size_t, int> hist;
    for (int i = 0; i < 1000; ++i) ++hist[sample_convex_polygon(rng).vertices.size()];
    EXPECT_EQ(hist.begin()->first, 3u);
    EXPECT_EQ(hist.rbegin()->first, 8u);
    EXPECT_EQ(hist.size(), 6u);
}

TEST(TexturedPolygon, AlphaMatchesRayCastingOracle) {
    Rng rng(17);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        const PolygonSample poly = sample_convex_polygon(rng);
        const cv::Mat mask = rasterize_convex_polygon(poly);
        for (int i = 0; i < 200; ++i) {
            const int x = static_cast<int>(unit(rng) * poly.canvas.width);
            const int y = static_cast<int>(unit(rng) * poly.canvas.height);
            EXPECT_EQ(mask.at<uchar>(y, x) != 0, ray_cast_inside(poly.vertices, {x + 0.5, y + 0.5})) << x << "," << y;
        }
        // The cutout is the tight crop of that raster.
        const ObjectCutout c = textured_polygon(texture_image(trial), poly);
        EXPECT_TRUE(tu::mats_equal(c.alpha, mask(nonzero_bounds(mask))));
    }
}

TEST(TexturedPolygon, SmallTextureRejected) {
    Rng rng(1);
    EXPECT_THROW(random_textured_polygon(cv::Mat(16, 16, CV_8UC3, cv::Scalar::all(5)), rng), ValidationError);
}

TEST(GeneratePair, FrameDifferenceIsUnionOfFootprints) {
    const BaseScene s = tu::small_scene(3);
    const ObjectCutout c = noise_cutout(10, 8, 11);
    const CompositeSample p = generate_pair(s, c, {35, 40}, {5, 5});
    cv::Mat diff;
    cv::compare(p.frame_t.reshape(1), p.frame_t1.reshape(1), diff, cv::CMP_NE);
    diff = diff.reshape(3);
    cv::Mat any(diff.size(), CV_8UC1);
    for (int y = 0; y < diff.rows; ++y)
        for (int x = 0; x < diff.cols; ++x) {
            const auto d = diff.at<cv::Vec3b>(y, x);
            any.at<uchar>(y, x) = (d[0] || d[1] || d[2]) ? 255 : 0;
        }
    cv::Mat fp = cv::Mat::zeros(s.image.size(), CV_8UC1);
    fp(footprint_rect(c.patch.size(), {35, 40})).setTo(255);
    fp(footprint_rect(c.patch.size(), {40, 45})).setTo(255);
    EXPECT_TRUE(tu::mats_equal(any, fp));
}

TEST(GeneratePair, ZeroShiftRejectedForDefaultRange) {
    EXPECT_THROW(generate_pair(tu::small_scene(), tu::solid_cutout(5, 5), {40, 40}, {0, 0}), ValidationError);
}

TEST(GeneratePair, FootprintAreaEqualInBothFrames) {
    const BaseScene s = tu::small_scene();
    ObjectCutout c = tu::solid_cutout(9, 7);
    c.alpha.at<uchar>(0, 0) = 0;
    const CompositeSample p = generate_pair(s, c, {30, 30}, {7, 9});
    EXPECT_EQ(cv::countNonZero(s.railway_mask) - cv::countNonZero(p.mask_t), 62);
    EXPECT_EQ(cv::countNonZero(s.railway_mask) - cv::countNonZero(p.mask_t1), 62);
}

namespace {

CompositeSample sample_for_augment() {
    return generate_pair(tu::small_scene(4), noise_cutout(12, 10, 2), {40, 45}, {6, 5});
}

bool same_sample(const CompositeSample& a, const CompositeSample& b) {
    return tu::mats_equal(a.frame_t, b.frame_t) && tu::mats_equal(a.frame_t1, b.frame_t1) &&
           tu::mats_equal(a.mask_t, b.mask_t) && tu::mats_equal(a.mask_t1, b.mask_t1) && a.hflipped == b.hflipped;
}

} // namespace

TEST(Augment, ForcedFlipTwiceRestoresOriginal) {
    const CompositeSample s = sample_for_augment();
    Rng rng(3);
    const CompositeSample once = augment(s, rng, {1.0, 0.0, 0.0});
    EXPECT_TRUE(once.hflipped);
    EXPECT_FALSE(tu::mats_equal(once.frame_t, s.frame_t));
    const CompositeSample twice = augment(once, rng, {1.0, 0.0, 0.0});
    EXPECT_TRUE(same_sample(twice, s));
}

TEST(Augment, DropoutNeverAltersMasks) {
    const CompositeSample s = sample_for_augment();
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const CompositeSample a = augment(s, rng, {0.0, 1.0, 0.0});
        EXPECT_TRUE(tu::mats_equal(a.mask_t, s.mask_t));
        EXPECT_TRUE(tu::mats_equal(a.mask_t1, s.mask_t1));
    }
}

TEST(Augment, DropoutCoversAtMostFourTenthsOfFrame) {
    const CompositeSample s = sample_for_augment();
    const int area = s.frame_t.rows * s.frame_t.cols;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const CompositeSample a = augment(s, rng, {0.0, 1.0, 0.0});
        cv::Mat changed;
        cv::compare(a.frame_t.reshape(1), s.frame_t.reshape(1), changed, cv::CMP_NE);
        cv::Mat px = changed.reshape(3);
        int n = 0;
        for (auto it = px.begin<cv::Vec3b>(); it != px.end<cv::Vec3b>(); ++it) n += ((*it)[0] || (*it)[1] || (*it)[2]);
        EXPECT_LE(n, 4 * area / 10);
    }
}

TEST(Augment, BrightnessLeavesMasksUntouched) {
    const CompositeSample s = sample_for_augment();
    Rng rng(8);
    const CompositeSample a = augment(s, rng, {0.0, 0.0, 1.0});
    EXPECT_TRUE(tu::mats_equal(a.mask_t, s.mask_t));
    EXPECT_FALSE(tu::mats_equal(a.frame_t, s.frame_t));
}

TEST(Augment, AllProbabilitiesFailIsIdentity) {
    const CompositeSample s = sample_for_augment();
    Rng rng(1);
    EXPECT_TRUE(same_sample(augment(s, rng, {0.0, 0.0, 0.0}), s));
}

TEST(Augment, DeterministicUnderFixedRng) {
    const CompositeSample s = sample_for_augment();
    Rng a(12), b(12);
    EXPECT_TRUE(same_sample(augment(s, a), augment(s, b)));
}

namespace {

struct SynthFixture {
    std::vector<BaseScene> scenes{tu::small_scene(1, Weather::sunny, "sun"), tu::small_scene(2, Weather::foggy, "fog"),
                                  tu::small_scene(3, Weather::rainy, "rain")};
    CutoutPools pools;
    SynthesisConfig config;
    SynthFixture() {
        pools.person.push_back(noise_cutout(30, 12, 1));
        pools.animal.push_back(noise_cutout(14, 30, 2));
        pools.textures.push_back(texture_image(3));
        config.counts = {2, 2, 1};
        config.rescale = {0.3, 8};
        config.global_seed = 9;
        config.polygon = {5, 10};
    }
};

} // namespace

TEST(SynthesizeDataset, CountsAndCategoryHistogram) {
    TempDir dir;
    SynthFixture f;
    const auto manifest = synthesize_dataset(f.scenes, f.pools, f.config, dir.path());
    const auto records = load_manifest(manifest);
    ASSERT_EQ(records.size(), 5u);
    std::map<Category, int> hist;
    for (const auto& r : records) ++hist[r.category];
    EXPECT_EQ(hist[Category::person], 2);
    EXPECT_EQ(hist[Category::animal], 2);
    EXPECT_EQ(hist[Category::texture], 1);
}

TEST(SynthesizeDataset, SameSeedGivesIdenticalOutputRegardlessOfJobs) {
    TempDir a, b;
    SynthFixture f;
    f.config.counts = {6, 6, 4};
    const auto ma = synthesize_dataset(f.scenes, f.pools, f.config, a.path(), 1);
    const auto mb = synthesize_dataset(f.scenes, f.pools, f.config, b.path(), 3);
    EXPECT_EQ(tu::slurp(ma), tu::slurp(mb));
    for (const auto& r : load_manifest(ma))
        for (const auto& p : {r.frame_t, r.frame_t1, r.mask_t, r.mask_t1}) EXPECT_EQ(tu::slurp(a / p), tu::slurp(b / p)) << p;
}

TEST(SynthesizeDataset, WeatherRoundRobin) {
    TempDir dir;
    SynthFixture f;
    f.config.counts = {3, 3, 0};
    const auto records = load_manifest(synthesize_dataset(f.scenes, f.pools, f.config, dir.path()));
    for (std::size_t i = 0; i < records.size(); ++i) EXPECT_EQ(records[i].weather, kAllWeathers[i % 3]);
}

TEST(SynthesizeDataset, SeedsDeriveFromGlobalSeedAndIndex) {
    TempDir dir;
    SynthFixture f;
    const auto records = load_manifest(synthesize_dataset(f.scenes, f.pools, f.config, dir.path()));
    for (std::size_t i = 0; i < records.size(); ++i) EXPECT_EQ(records[i].seed, sample_seed(9, i));
    EXPECT_NE(sample_seed(9, 0), sample_seed(10, 0));
}

TEST(SynthesizeDataset, EmptyPoolIsConfigErrorBeforeAnyWork) {
    TempDir dir;
    SynthFixture f;
    f.pools.animal.clear();
    EXPECT_THROW(synthesize_dataset(f.scenes, f.pools, f.config, dir / "out"), ConfigError);
    EXPECT_FALSE(std::filesystem::exists(dir / "out"));
}

TEST(SynthesizeDataset, EmptyPoolAllowedWhenCountIsZero) {
    TempDir dir;
    SynthFixture f;
    f.pools.animal.clear();
    f.config.counts = {2, 0, 1};
    EXPECT_EQ(load_manifest(synthesize_dataset(f.scenes, f.pools, f.config, dir.path())).size(), 3u);
}

TEST(SynthesizeDataset, ShiftsInRangeAndObjectsOccludeRailway) {
    TempDir dir;
    SynthFixture f;
    f.config.counts = {10, 10, 5};
    const auto m = synthesize_dataset(f.scenes, f.pools, f.config, dir.path());
    for (const auto& r : load_manifest(m)) {
        EXPECT_TRUE(f.config.shift_range.contains({r.dx, r.dy}));
        const LoadedSample s = load_sample(dir.path(), r);
        EXPECT_LT(cv::countNonZero(s.mask_t), cv::countNonZero(f.scenes[0].railway_mask)) << r.frame_t;
    }
}

TEST(SynthesisConfig, InvalidShiftRange) {
    SynthesisConfig c;
    c.shift_range = {0, 10};
    EXPECT_FALSE(validate_synthesis_config(c).empty());
    c.shift_range = {8, 6};
    EXPECT_FALSE(validate_synthesis_config(c).empty());
    c.shift_range = {1, 1};
    EXPECT_TRUE(validate_synthesis_config(c).empty());
}
