#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "railsynth/compositor.hpp"
#include "railsynth/manifest.hpp"
#include "railsynth/scene.hpp"

namespace railsynth {

enum class PlacementRegion { railway_only, railway_and_margin };

std::string_view to_string(PlacementRegion r);
std::optional<PlacementRegion> parse_placement_region(std::string_view s);

struct CategoryCounts {
    int person = 0;
    int animal = 0;
    int texture = 0;

    int of(Category c) const;
    int total() const { return person + animal + texture; }
};

struct SynthesisConfig {
    CategoryCounts counts{4000, 4000, 2000};
    RescaleParams rescale{0.6, 30.0};
    ShiftRange shift_range{5, 10};
    std::uint64_t global_seed = 0;
    PlacementRegion placement_region = PlacementRegion::railway_only;
    /// Margin half-width in pixels added around the railway for railway_and_margin.
    int margin_px = 8;
    bool feather = false;
    PolygonParams polygon{};
};

std::vector<std::string> validate_synthesis_config(const SynthesisConfig& config);

/// Cutouts per category; textures are raw texture images for polygon filling.
struct CutoutPools {
    std::vector<ObjectCutout> person;
    std::vector<ObjectCutout> animal;
    std::vector<cv::Mat> textures;

    std::size_t size_of(Category c) const;
};

/// Per-sample seed, a SplitMix64 mix of (global_seed, index).
std::uint64_t sample_seed(std::uint64_t global_seed, std::uint64_t index);

/// Category of sample `index`: counts are laid out person, animal, texture.
Category category_for_index(const CategoryCounts& counts, std::size_t index);

/// Builds sample `index` in memory (no I/O). Deterministic in (config, index).
/// `placed`, when given, receives the rescaled cutout that was pasted.
CompositeSample synthesize_sample(std::span<const BaseScene> scenes, const CutoutPools& pools,
                                  const SynthesisConfig& config, std::size_t index, ObjectCutout* placed = nullptr);

/// Writes every sample's rasters under `out_dir/samples` and the manifest at
/// `out_dir/manifest.jsonl`; returns the manifest path. `jobs` worker threads
/// (0 = hardware concurrency); output does not depend on the job count.
std::filesystem::path synthesize_dataset(std::span<const BaseScene> scenes, const CutoutPools& pools,
                                         const SynthesisConfig& config, const std::filesystem::path& out_dir,
                                         unsigned jobs = 1);

/// Scene order used for sample `index`: weathers cycle in sunny, foggy, rainy
/// order (skipping absent ones) and scenes round-robin within a weather.
std::size_t scene_for_index(std::span<const BaseScene> scenes, std::size_t index);

} // namespace railsynth
