#include "railsynth/manifest.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "railsynth/errors.hpp"
#include "railsynth/image_io.hpp"

namespace railsynth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json to_json(const SampleRecord& r) {
    json j = json::object();
    j["schema_version"] = r.schema_version;
    j["scene_id"] = r.scene_id;
    j["seed"] = r.seed;
    j["frame_t"] = r.frame_t;
    j["frame_t1"] = r.frame_t1;
    j["mask_t"] = r.mask_t;
    j["mask_t1"] = r.mask_t1;
    j["weather"] = std::string(to_string(r.weather));
    j["category"] = std::string(to_string(r.category));
    j["anchor_x"] = r.anchor_x;
    j["anchor_y"] = r.anchor_y;
    j["dx"] = r.dx;
    j["dy"] = r.dy;
    return j;
}

template <typename T>
T required(const json& j, const char* key) {
    if (!j.contains(key)) throw std::invalid_argument(std::string("missing key '") + key + "'");
    return j.at(key).get<T>();
}

SampleRecord from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("record is not an object");
    SampleRecord r;
    r.schema_version = required<int>(j, "schema_version");
    if (r.schema_version != kManifestSchemaVersion)
        throw VersionError("unsupported manifest schema_version " + std::to_string(r.schema_version) +
                           " (expected " + std::to_string(kManifestSchemaVersion) + ")");
    r.scene_id = required<std::string>(j, "scene_id");
    r.seed = required<std::uint64_t>(j, "seed");
    r.frame_t = required<std::string>(j, "frame_t");
    r.frame_t1 = required<std::string>(j, "frame_t1");
    r.mask_t = required<std::string>(j, "mask_t");
    r.mask_t1 = required<std::string>(j, "mask_t1");
    const auto weather = required<std::string>(j, "weather");
    const auto w = parse_weather(weather);
    if (!w) throw std::invalid_argument("unknown weather '" + weather + "'");
    r.weather = *w;
    const auto category = required<std::string>(j, "category");
    const auto c = parse_category(category);
    if (!c) throw std::invalid_argument("unknown category '" + category + "'");
    r.category = *c;
    r.anchor_x = required<int>(j, "anchor_x");
    r.anchor_y = required<int>(j, "anchor_y");
    r.dx = required<int>(j, "dx");
    r.dy = required<int>(j, "dy");
    return r;
}

} // namespace

std::size_t write_manifest(std::span<const SampleRecord> records, const fs::path& path) {
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    std::vector<std::string> missing;
    for (const auto& r : records) {
        for (const std::string* p : {&r.frame_t, &r.frame_t1, &r.mask_t, &r.mask_t1}) {
            if (!fs::exists(dir / *p)) missing.push_back(r.scene_id + " (seed " + std::to_string(r.seed) + "): " + *p);
        }
    }
    if (!missing.empty()) {
        std::string msg = "manifest references missing rasters:";
        for (const auto& m : missing) msg += "\n  " + m;
        throw ValidationError(msg);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open manifest for writing: " + path.string());
    for (const auto& r : records) out << to_json(r).dump() << '\n';
    out.flush();
    if (!out) throw IoError("failed writing manifest: " + path.string());
    return records.size();
}

std::vector<SampleRecord> load_manifest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    std::vector<SampleRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            records.push_back(from_json(json::parse(line)));
        } catch (const VersionError& e) {
            throw VersionError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const std::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
        }
    }
    return records;
}

LoadedSample load_sample(const fs::path& manifest_dir, const SampleRecord& record) {
    LoadedSample s;
    s.record = record;
    s.frame_t = read_image(manifest_dir / record.frame_t);
    s.frame_t1 = read_image(manifest_dir / record.frame_t1);
    s.mask_t = read_mask(manifest_dir / record.mask_t);
    s.mask_t1 = read_mask(manifest_dir / record.mask_t1);
    if (s.frame_t.size() != s.frame_t1.size() || s.frame_t.size() != s.mask_t.size() ||
        s.frame_t.size() != s.mask_t1.size())
        throw ValidationError("sample " + record.scene_id + " (seed " + std::to_string(record.seed) +
                              "): raster dimensions disagree");
    return s;
}

CompositeSample to_composite(const LoadedSample& loaded) {
    CompositeSample c;
    c.frame_t = loaded.frame_t;
    c.frame_t1 = loaded.frame_t1;
    c.mask_t = loaded.mask_t;
    c.mask_t1 = loaded.mask_t1;
    c.placement.anchor = {loaded.record.anchor_x, loaded.record.anchor_y};
    c.placement.shift = {loaded.record.dx, loaded.record.dy};
    c.scene_id = loaded.record.scene_id;
    c.seed = loaded.record.seed;
    c.weather = loaded.record.weather;
    c.category = loaded.record.category;
    return c;
}

} // namespace railsynth
