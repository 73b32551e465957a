#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "railsynth/scene.hpp"

namespace railsynth {

inline constexpr int kManifestSchemaVersion = 1;

/// One manifest line. Raster paths are relative to the manifest's directory.
struct SampleRecord {
    int schema_version = kManifestSchemaVersion;
    std::string scene_id;
    std::uint64_t seed = 0;
    std::string frame_t;
    std::string frame_t1;
    std::string mask_t;
    std::string mask_t1;
    Weather weather = Weather::sunny;
    Category category = Category::person;
    int anchor_x = 0;
    int anchor_y = 0;
    int dx = 0;
    int dy = 0;

    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

/// Writes one JSON object per line, overwriting `path`. Every referenced raster
/// must exist, otherwise a ValidationError naming the sample is thrown and
/// nothing is written.
std::size_t write_manifest(std::span<const SampleRecord> records, const std::filesystem::path& path);

/// Parses a manifest. Unknown keys are ignored; malformed lines raise a
/// ValidationError carrying the 1-based line number and a schema_version
/// other than kManifestSchemaVersion raises VersionError.
std::vector<SampleRecord> load_manifest(const std::filesystem::path& path);

/// Rasters of one record, loaded relative to `manifest_dir`.
struct LoadedSample {
    SampleRecord record;
    cv::Mat frame_t;
    cv::Mat frame_t1;
    cv::Mat mask_t;
    cv::Mat mask_t1;
};

LoadedSample load_sample(const std::filesystem::path& manifest_dir, const SampleRecord& record);

CompositeSample to_composite(const LoadedSample& loaded);

} // namespace railsynth
