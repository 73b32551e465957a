#include "railsynth/synthesis.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <iostream>
#include <mutex>
#include <thread>

#include <opencv2/imgproc.hpp>

#include "railsynth/errors.hpp"
#include "railsynth/image_io.hpp"

namespace railsynth {

namespace fs = std::filesystem;

std::string_view to_string(PlacementRegion r) {
    return r == PlacementRegion::railway_only ? "railway_only" : "railway_and_margin";
}

std::optional<PlacementRegion> parse_placement_region(std::string_view s) {
    if (s == "railway_only") return PlacementRegion::railway_only;
    if (s == "railway_and_margin") return PlacementRegion::railway_and_margin;
    return std::nullopt;
}

int CategoryCounts::of(Category c) const {
    switch (c) {
    case Category::person: return person;
    case Category::animal: return animal;
    case Category::texture: return texture;
    }
    return 0;
}

std::size_t CutoutPools::size_of(Category c) const {
    switch (c) {
    case Category::person: return person.size();
    case Category::animal: return animal.size();
    case Category::texture: return textures.size();
    }
    return 0;
}

std::vector<std::string> validate_synthesis_config(const SynthesisConfig& config) {
    std::vector<std::string> v;
    for (Category c : kAllCategories)
        if (config.counts.of(c) < 0) v.push_back("counts." + std::string(to_string(c)) + " must be >= 0");
    if (config.shift_range.lo < 1) v.emplace_back("shift_range lower bound must be >= 1");
    if (config.shift_range.lo > config.shift_range.hi) v.emplace_back("shift_range lower bound exceeds upper bound");
    if (config.margin_px < 0) v.emplace_back("margin_px must be >= 0");
    for (auto& m : validate_rescale(config.rescale)) v.push_back(std::move(m));
    return v;
}

std::uint64_t sample_seed(std::uint64_t global_seed, std::uint64_t index) {
    std::uint64_t z = global_seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Category category_for_index(const CategoryCounts& counts, std::size_t index) {
    const auto i = static_cast<long long>(index);
    if (i < counts.person) return Category::person;
    if (i < counts.person + counts.animal) return Category::animal;
    return Category::texture;
}

std::size_t scene_for_index(std::span<const BaseScene> scenes, std::size_t index) {
    std::vector<std::vector<std::size_t>> groups;
    for (Weather w : kAllWeathers) {
        std::vector<std::size_t> g;
        for (std::size_t i = 0; i < scenes.size(); ++i)
            if (scenes[i].weather == w) g.push_back(i);
        if (!g.empty()) groups.push_back(std::move(g));
    }
    if (groups.empty()) throw ValidationError("no base scenes");
    const auto& g = groups[index % groups.size()];
    return g[(index / groups.size()) % g.size()];
}

namespace {

cv::Mat placement_region_mask(const BaseScene& scene, const SynthesisConfig& config) {
    if (config.placement_region == PlacementRegion::railway_only || config.margin_px == 0) return scene.railway_mask;
    cv::Mat grown;
    const int k = 2 * config.margin_px + 1;
    cv::dilate(scene.railway_mask, grown, cv::getStructuringElement(cv::MORPH_RECT, {k, k}));
    return grown;
}

bool occludes_railway(const BaseScene& scene, const ObjectCutout& cutout, cv::Point anchor) {
    const cv::Rect frame(0, 0, scene.image.cols, scene.image.rows);
    const cv::Rect placed = footprint_rect(cutout.alpha.size(), anchor);
    const cv::Rect visible = placed & frame;
    if (visible.empty()) return false;
    const cv::Rect src(visible.x - placed.x, visible.y - placed.y, visible.width, visible.height);
    cv::Mat overlap;
    cv::bitwise_and(cutout.alpha(src), scene.railway_mask(visible), overlap);
    return cv::countNonZero(overlap) > 0;
}

bool in_frame(const BaseScene& scene, const ObjectCutout& cutout, cv::Point anchor) {
    return !(footprint_rect(cutout.alpha.size(), anchor) & cv::Rect(0, 0, scene.image.cols, scene.image.rows)).empty();
}

} // namespace

CompositeSample synthesize_sample(std::span<const BaseScene> scenes, const CutoutPools& pools,
                                  const SynthesisConfig& config, std::size_t index, ObjectCutout* placed) {
    const std::uint64_t seed = sample_seed(config.global_seed, index);
    Rng rng(seed);
    const BaseScene& scene = scenes[scene_for_index(scenes, index)];
    const Category category = category_for_index(config.counts, index);

    ObjectCutout source;
    if (category == Category::texture) {
        std::uniform_int_distribution<std::size_t> pick(0, pools.textures.size() - 1);
        source = random_textured_polygon(pools.textures[pick(rng)], rng, config.polygon);
    } else {
        const auto& pool = category == Category::person ? pools.person : pools.animal;
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        source = pool[pick(rng)];
    }
    // The pool a cutout was drawn from defines its category.
    source.category = category;

    const cv::Mat region = placement_region_mask(scene, config);
    std::vector<cv::Point> candidates;
    cv::findNonZero(region, candidates);
    if (candidates.empty()) throw ValidationError("scene " + scene.scene_id + " has an empty placement region");
    std::uniform_int_distribution<std::size_t> pick_anchor(0, candidates.size() - 1);
    std::uniform_int_distribution<int> shift_dist(config.shift_range.lo, config.shift_range.hi);

    constexpr int kMaxAttempts = 200;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        const cv::Point anchor = candidates[pick_anchor(rng)];
        const Shift shift{shift_dist(rng), shift_dist(rng)};
        ObjectCutout scaled;
        try {
            scaled = rescale_cutout(source, anchor.y, config.rescale);
        } catch (const ObjectTooSmall&) {
            continue;
        }
        if (!occludes_railway(scene, scaled, anchor)) continue;
        if (!in_frame(scene, scaled, anchor + cv::Point(shift.dx, shift.dy))) continue;
        CompositeSample s = generate_pair(scene, scaled, anchor, shift, config.shift_range, seed, config.feather);
        s.placement.rescale = config.rescale;
        if (placed) *placed = std::move(scaled);
        return s;
    }
    throw ValidationError("sample " + std::to_string(index) + ": no valid placement on scene " + scene.scene_id +
                          " after " + std::to_string(kMaxAttempts) + " attempts");
}

fs::path synthesize_dataset(std::span<const BaseScene> scenes, const CutoutPools& pools,
                            const SynthesisConfig& config, const fs::path& out_dir, unsigned jobs) {
    if (const auto v = validate_synthesis_config(config); !v.empty()) throw ConfigError("synthesis config: " + v.front());
    if (scenes.empty()) throw ConfigError("synthesis needs at least one base scene");
    for (const auto& s : scenes)
        if (const auto v = validate_scene(s); !v.empty())
            throw ValidationError("scene " + s.scene_id + ": " + v.front());
    for (Category c : kAllCategories)
        if (config.counts.of(c) > 0 && pools.size_of(c) == 0)
            throw ConfigError("cutout pool for category '" + std::string(to_string(c)) + "' is empty but " +
                              std::to_string(config.counts.of(c)) + " samples were requested");
    for (Weather w : kAllWeathers) {
        const bool present = std::any_of(scenes.begin(), scenes.end(), [&](const BaseScene& s) { return s.weather == w; });
        if (!present) std::cerr << "warning: no base scene with weather '" << to_string(w) << "'\n";
    }

    const std::size_t total = static_cast<std::size_t>(config.counts.total());
    std::vector<SampleRecord> records(total);
    fs::create_directories(out_dir / "samples");

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= total) return;
            try {
                const CompositeSample s = synthesize_sample(scenes, pools, config, i);
                char stem[32];
                std::snprintf(stem, sizeof stem, "samples/%06zu", i);
                SampleRecord r;
                r.scene_id = s.scene_id;
                r.seed = s.seed;
                r.frame_t = std::string(stem) + "_t.png";
                r.frame_t1 = std::string(stem) + "_t1.png";
                r.mask_t = std::string(stem) + "_mask_t.png";
                r.mask_t1 = std::string(stem) + "_mask_t1.png";
                r.weather = s.weather;
                r.category = s.category;
                r.anchor_x = s.placement.anchor.x;
                r.anchor_y = s.placement.anchor.y;
                r.dx = s.placement.shift.dx;
                r.dy = s.placement.shift.dy;
                write_png(out_dir / r.frame_t, s.frame_t);
                write_png(out_dir / r.frame_t1, s.frame_t1);
                write_png(out_dir / r.mask_t, s.mask_t);
                write_png(out_dir / r.mask_t1, s.mask_t1);
                records[i] = std::move(r);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next.store(total);
                return;
            }
        }
    };

    if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
    jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, std::max<std::size_t>(total, 1)));
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);

    const fs::path manifest = out_dir / "manifest.jsonl";
    write_manifest(records, manifest);
    return manifest;
}

} // namespace railsynth
