#include "railsynth/desk_fixture.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <opencv2/imgproc.hpp>

#include "railsynth/extraction.hpp"
#include "railsynth/image_io.hpp"

namespace railsynth {

namespace fs = std::filesystem;

namespace {

cv::Vec3b random_color(Rng& rng, int lo = 20, int hi = 235) {
    std::uniform_int_distribution<int> d(lo, hi);
    return {static_cast<std::uint8_t>(d(rng)), static_cast<std::uint8_t>(d(rng)), static_cast<std::uint8_t>(d(rng))};
}

// Colors must stay clear of the chroma key so the oracle recovers them exactly.
cv::Vec3b object_color(Rng& rng) {
    for (;;) {
        cv::Vec3b c = random_color(rng);
        int dist = 0;
        for (int k = 0; k < 3; ++k) dist = std::max(dist, std::abs(int(c[k]) - int(kChromaGreen[k])));
        if (dist > kChromaTolerance + 60) return c;
    }
}

void add_noise(cv::Mat& img, Rng& rng, int amplitude) {
    std::uniform_int_distribution<int> d(-amplitude, amplitude);
    for (int y = 0; y < img.rows; ++y)
        for (int x = 0; x < img.cols; ++x) {
            auto& px = img.at<cv::Vec3b>(y, x);
            const int n = d(rng);
            for (int c = 0; c < 3; ++c) px[c] = cv::saturate_cast<std::uint8_t>(px[c] + n);
        }
}

} // namespace

int desk_horizon_row(int frame_height) { return static_cast<int>(std::lround(frame_height * 0.3)); }

BaseScene make_base_scene(cv::Size frame, Weather weather, std::uint64_t seed, std::string scene_id) {
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int w = frame.width;
    const int h = frame.height;
    const int horizon = desk_horizon_row(h);

    cv::Mat img(frame, CV_8UC3);
    const cv::Vec3b ground = {static_cast<std::uint8_t>(40 + unit(rng) * 40), static_cast<std::uint8_t>(90 + unit(rng) * 50),
                              static_cast<std::uint8_t>(70 + unit(rng) * 40)};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (y < horizon) {
                const double t = static_cast<double>(y) / horizon;
                img.at<cv::Vec3b>(y, x) = {static_cast<std::uint8_t>(230 - 40 * t), static_cast<std::uint8_t>(200 - 30 * t),
                                           static_cast<std::uint8_t>(170 - 30 * t)};
            } else {
                img.at<cv::Vec3b>(y, x) = ground;
            }
        }
    // Field clutter below the horizon.
    for (int i = 0; i < w * h / 40; ++i) {
        const cv::Point p(static_cast<int>(unit(rng) * w), horizon + static_cast<int>(unit(rng) * (h - horizon)));
        cv::circle(img, p, 1 + static_cast<int>(unit(rng) * 2), cv::Scalar(ground) * (0.7 + 0.6 * unit(rng)), cv::FILLED);
    }

    // Track bed: a trapezoid converging towards the horizon.
    const double center_bottom = w * (0.5 + (unit(rng) - 0.5) * 0.1);
    const double center_top = w * (0.5 + (unit(rng) - 0.5) * 0.06);
    const double half_bottom = w * (0.26 + unit(rng) * 0.04);
    const double half_top = w * 0.03;
    auto half_at = [&](double y) { return half_top + (half_bottom - half_top) * (y - horizon) / (h - 1 - horizon); };
    auto center_at = [&](double y) { return center_top + (center_bottom - center_top) * (y - horizon) / (h - 1 - horizon); };

    cv::Mat mask = cv::Mat::zeros(frame, CV_8UC1);
    std::uniform_int_distribution<int> ballast(-28, 28);
    const int shade = 110 + static_cast<int>(unit(rng) * 30);
    for (int y = horizon; y < h; ++y) {
        const double c = center_at(y);
        const double hw = half_at(y);
        for (int x = 0; x < w; ++x) {
            if (std::abs(x + 0.5 - c) > hw) continue;
            mask.at<std::uint8_t>(y, x) = 255;
            const int g = shade + ballast(rng);
            img.at<cv::Vec3b>(y, x) = {cv::saturate_cast<std::uint8_t>(g + 5), cv::saturate_cast<std::uint8_t>(g),
                                       cv::saturate_cast<std::uint8_t>(g - 5)};
        }
    }
    // Sleepers, spaced by perspective.
    for (double t = 0.02; t < 1.0; t += 0.02 + 0.09 * t) {
        const int y = horizon + static_cast<int>(std::lround(t * (h - 1 - horizon)));
        const int thick = std::max(1, static_cast<int>(std::lround(t * 3)));
        const double c = center_at(y);
        const double hw = half_at(y) * 0.75;
        cv::rectangle(img, cv::Point(static_cast<int>(c - hw), y), cv::Point(static_cast<int>(c + hw), y + thick - 1),
                      cv::Scalar(40, 60, 90), cv::FILLED);
    }
    // Rails.
    for (double side : {-0.45, 0.45}) {
        const cv::Point top(static_cast<int>(std::lround(center_top + side * half_top * 2)), horizon);
        const cv::Point bottom(static_cast<int>(std::lround(center_bottom + side * half_bottom * 1.2)), h - 1);
        cv::line(img, top, bottom, cv::Scalar(215, 215, 220), 1, cv::LINE_8);
    }
    cv::bitwise_and(mask, mask, mask);

    switch (weather) {
    case Weather::sunny: break;
    case Weather::foggy:
        for (int y = 0; y < h; ++y) {
            const double f = 0.35 + 0.35 * (1.0 - static_cast<double>(y) / h);
            for (int x = 0; x < w; ++x) {
                auto& px = img.at<cv::Vec3b>(y, x);
                for (int c = 0; c < 3; ++c) px[c] = cv::saturate_cast<std::uint8_t>(px[c] * (1 - f) + 205 * f);
            }
        }
        break;
    case Weather::rainy:
        img.convertTo(img, CV_8UC3, 0.7, 0);
        for (int i = 0; i < w * h / 60; ++i) {
            const cv::Point p(static_cast<int>(unit(rng) * w), static_cast<int>(unit(rng) * h));
            cv::line(img, p, p + cv::Point(1, 4), cv::Scalar(170, 160, 150), 1, cv::LINE_8);
        }
        break;
    }

    BaseScene scene;
    scene.image = img;
    scene.railway_mask = mask;
    scene.weather = weather;
    scene.scene_id = std::move(scene_id);
    return scene;
}

cv::Mat make_object_image(Category category, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    cv::Mat img(48, 48, CV_8UC3, cv::Scalar(kChromaGreen));
    const cv::Scalar main(object_color(rng));
    const cv::Scalar accent(object_color(rng));
    if (category == Category::person) {
        const int cx = 24;
        cv::circle(img, {cx, 7}, 5, cv::Scalar(object_color(rng)), cv::FILLED);
        cv::ellipse(img, {cx, 20}, {7 + static_cast<int>(unit(rng) * 3), 9}, 0, 0, 360, main, cv::FILLED);
        cv::rectangle(img, cv::Point(cx - 6, 27), cv::Point(cx - 2, 46), accent, cv::FILLED);
        cv::rectangle(img, cv::Point(cx + 2, 27), cv::Point(cx + 6, 46), accent, cv::FILLED);
        cv::line(img, {cx - 8, 15}, {cx - 12, 28}, main, 3);
        cv::line(img, {cx + 8, 15}, {cx + 12, 28}, main, 3);
    } else {
        const int body_h = 8 + static_cast<int>(unit(rng) * 4);
        cv::ellipse(img, {22, 22}, {15, body_h}, 0, 0, 360, main, cv::FILLED);
        cv::ellipse(img, {39, 15}, {6, 5}, -20, 0, 360, main, cv::FILLED);
        for (int lx : {11, 16, 28, 33}) cv::rectangle(img, cv::Point(lx, 26), cv::Point(lx + 2, 40), accent, cv::FILLED);
        cv::line(img, {7, 20}, {3, 30}, accent, 2);
    }
    // Surface texture, kept away from the key colour.
    Rng noise_rng(seed ^ 0x77);
    std::uniform_int_distribution<int> d(-18, 18);
    for (int y = 0; y < img.rows; ++y)
        for (int x = 0; x < img.cols; ++x) {
            auto& px = img.at<cv::Vec3b>(y, x);
            if (px == kChromaGreen) continue;
            const int n = d(noise_rng);
            cv::Vec3b q;
            for (int c = 0; c < 3; ++c) q[c] = cv::saturate_cast<std::uint8_t>(px[c] + n);
            int dist = 0;
            for (int c = 0; c < 3; ++c) dist = std::max(dist, std::abs(int(q[c]) - int(kChromaGreen[c])));
            if (dist > kChromaTolerance) px = q;
        }
    return img;
}

cv::Mat make_texture(std::uint64_t seed, cv::Size size) {
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const cv::Vec3b a = random_color(rng);
    const cv::Vec3b b = random_color(rng);
    cv::Mat tex(size, CV_8UC3);
    const int kind = static_cast<int>(seed % 4);
    const double period = 4 + unit(rng) * 8;
    const double angle = unit(rng) * 3.14159;
    for (int y = 0; y < size.height; ++y)
        for (int x = 0; x < size.width; ++x) {
            bool first = true;
            switch (kind) {
            case 0: first = std::fmod(x * std::cos(angle) + y * std::sin(angle) + 1000.0, period) < period / 2; break;
            case 1: first = ((x / static_cast<int>(period)) + (y / static_cast<int>(period))) % 2 == 0; break;
            case 2: first = std::sin(x * 0.5) * std::cos(y * 0.4) > 0.0; break;
            default: first = unit(rng) < 0.5; break;
            }
            tex.at<cv::Vec3b>(y, x) = first ? a : b;
        }
    if (kind == 3) cv::GaussianBlur(tex, tex, {5, 5}, 0);
    add_noise(tex, rng, 10);
    return tex;
}

DeskFixture make_desk_fixture(const DeskFixtureOptions& options) {
    DeskFixture f;
    std::uint64_t k = 0;
    for (Weather w : kAllWeathers)
        for (int i = 0; i < options.scenes_per_weather; ++i)
            f.scenes.push_back(make_base_scene(options.frame, w, sample_seed(options.seed, k++),
                                               std::string(to_string(w)) + "_" + std::to_string(i)));
    for (Category c : {Category::person, Category::animal}) {
        auto& pool = c == Category::person ? f.pools.person : f.pools.animal;
        for (int i = 0; i < options.objects_per_category; ++i) {
            const cv::Mat img = make_object_image(c, sample_seed(options.seed, 1000 + k++));
            pool.push_back(oracle_extract(img, kChromaGreen, kChromaTolerance, c,
                                          std::string(to_string(c)) + "_" + std::to_string(i)));
        }
    }
    for (int i = 0; i < options.textures; ++i) f.pools.textures.push_back(make_texture(sample_seed(options.seed, 2000 + k++)));
    return f;
}

void write_desk_fixture(const DeskFixtureOptions& options, const fs::path& root) {
    std::uint64_t k = 0;
    for (Weather w : kAllWeathers)
        for (int i = 0; i < options.scenes_per_weather; ++i)
            write_scene(root / "scenes", make_base_scene(options.frame, w, sample_seed(options.seed, k++),
                                                         std::string(to_string(w)) + "_" + std::to_string(i)));
    for (Category c : {Category::person, Category::animal})
        for (int i = 0; i < options.objects_per_category; ++i)
            write_png(root / "objects" / std::string(to_string(c)) / (std::string(to_string(c)) + "_" + std::to_string(i) + ".png"),
                      make_object_image(c, sample_seed(options.seed, 1000 + k++)));
    for (int i = 0; i < options.textures; ++i)
        write_png(root / "objects" / "texture" / ("texture_" + std::to_string(i) + ".png"),
                  make_texture(sample_seed(options.seed, 2000 + k++)));
}

SynthesisConfig desk_synthesis_config(CategoryCounts counts, std::uint64_t seed) {
    SynthesisConfig c;
    c.counts = counts;
    c.rescale = {0.25, 8.0};
    c.shift_range = {5, 10};
    c.global_seed = seed;
    c.placement_region = PlacementRegion::railway_only;
    c.polygon = {5.0, 12.0};
    return c;
}

cv::Mat degrade_contrast(const cv::Mat& image, double factor) {
    cv::Mat out;
    image.convertTo(out, CV_8UC3, 1.0 - factor, 200.0 * factor);
    return out;
}

fs::path degrade_dataset(const fs::path& manifest, const fs::path& out_dir, double factor) {
    const auto records = load_manifest(manifest);
    const fs::path src = manifest.parent_path();
    for (const auto& r : records) {
        write_png(out_dir / r.frame_t, degrade_contrast(read_image(src / r.frame_t), factor));
        write_png(out_dir / r.frame_t1, degrade_contrast(read_image(src / r.frame_t1), factor));
        write_png(out_dir / r.mask_t, read_mask(src / r.mask_t));
        write_png(out_dir / r.mask_t1, read_mask(src / r.mask_t1));
    }
    const fs::path out = out_dir / "manifest.jsonl";
    write_manifest(records, out);
    return out;
}

std::map<std::string, std::vector<SampleRecord>> partition_bands(std::span<const SampleRecord> records, int horizon_row,
                                                                 int frame_height) {
    std::map<std::string, std::vector<SampleRecord>> bands{{"near", {}}, {"mid", {}}, {"far", {}}};
    const double span = static_cast<double>(frame_height - horizon_row);
    for (const auto& r : records) {
        const double t = (r.anchor_y - horizon_row) / span;
        bands[t < 1.0 / 3 ? "far" : (t < 2.0 / 3 ? "mid" : "near")].push_back(r);
    }
    return bands;
}

} // namespace railsynth
