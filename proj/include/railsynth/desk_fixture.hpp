#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "railsynth/manifest.hpp"
#include "railsynth/scene.hpp"
#include "railsynth/synthesis.hpp"

namespace railsynth {

/// Procedurally rendered stand-ins for the real inputs: base scenes with a
/// converging track under three weathers, chroma-keyed person/animal object
/// images and tileable textures. Small enough to train on a CPU.
struct DeskFixtureOptions {
    cv::Size frame{80, 64};
    int scenes_per_weather = 3;
    int objects_per_category = 8;
    int textures = 6;
    std::uint64_t seed = 1;
};

inline const cv::Vec3b kChromaGreen{0, 255, 0};
inline constexpr int kChromaTolerance = 40;

BaseScene make_base_scene(cv::Size frame, Weather weather, std::uint64_t seed, std::string scene_id);

/// Person or animal silhouette on a flat chroma-green canvas.
cv::Mat make_object_image(Category category, std::uint64_t seed);

cv::Mat make_texture(std::uint64_t seed, cv::Size size = {48, 48});

struct DeskFixture {
    std::vector<BaseScene> scenes;
    CutoutPools pools;
};

/// In-memory fixture; person/animal cutouts come from the chroma-key oracle.
DeskFixture make_desk_fixture(const DeskFixtureOptions& options);

/// Writes `scenes/<id>/...`, `objects/{person,animal,texture}/*.png`.
void write_desk_fixture(const DeskFixtureOptions& options, const std::filesystem::path& root);

/// Synthesis settings matched to the desk frame size (objects 8-24 px tall).
SynthesisConfig desk_synthesis_config(CategoryCounts counts, std::uint64_t seed);

/// Haze: blends toward a light gray, reducing contrast by `factor` in [0, 1).
cv::Mat degrade_contrast(const cv::Mat& image, double factor);

/// Copy of a synthesized dataset with both frames passed through
/// degrade_contrast; masks are copied unchanged. Returns the new manifest.
std::filesystem::path degrade_dataset(const std::filesystem::path& manifest, const std::filesystem::path& out_dir,
                                      double factor);

/// Splits records into near / mid / far thirds of the rows between the top of
/// the railway region (`horizon_row`) and the bottom of the frame, by anchor_y.
std::map<std::string, std::vector<SampleRecord>> partition_bands(std::span<const SampleRecord> records,
                                                                 int horizon_row, int frame_height);

/// Row of the horizon used by make_base_scene for a frame height.
int desk_horizon_row(int frame_height);

} // namespace railsynth
