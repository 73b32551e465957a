#include "railsynth/image_io.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "railsynth/errors.hpp"
#include "railsynth/scene.hpp"

namespace railsynth {

namespace fs = std::filesystem;

cv::Mat read_image(const fs::path& path) {
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (img.empty()) throw IoError("cannot read image: " + path.string());
    return img;
}

cv::Mat read_mask(const fs::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw IoError("cannot read mask: " + path.string());
    return binarize(m);
}

void write_png(const fs::path& path, const cv::Mat& raster) {
    if (raster.depth() != CV_8U) throw IoError("refusing to write non-8-bit raster: " + path.string());
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    // Fixed compression level keeps the bytes stable across runs.
    const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 3};
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), raster, params);
    } catch (const cv::Exception& e) {
        throw IoError("cannot write " + path.string() + ": " + e.what());
    }
    if (!ok) throw IoError("cannot write " + path.string());
}

BaseScene load_scene(const fs::path& dir) {
    BaseScene s;
    s.scene_id = dir.filename().string();
    s.image = read_image(dir / "image.png");
    s.railway_mask = read_mask(dir / "railway_mask.png");
    std::ifstream in(dir / "scene.json");
    if (!in) throw IoError("missing " + (dir / "scene.json").string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError((dir / "scene.json").string() + ": " + e.what());
    }
    const std::string w = meta.value("weather", std::string{});
    const auto weather = parse_weather(w);
    if (!weather) throw ValidationError("scene " + s.scene_id + ": weather '" + w + "' not in {sunny, foggy, rainy}");
    s.weather = *weather;
    return s;
}

std::vector<BaseScene> load_scenes(const fs::path& root) {
    if (!fs::is_directory(root)) throw IoError("scenes directory not found: " + root.string());
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    std::vector<BaseScene> scenes;
    for (const auto& d : dirs) scenes.push_back(load_scene(d));
    return scenes;
}

void write_scene(const fs::path& root, const BaseScene& scene) {
    const fs::path dir = root / scene.scene_id;
    write_png(dir / "image.png", scene.image);
    write_png(dir / "railway_mask.png", scene.railway_mask);
    std::ofstream out(dir / "scene.json", std::ios::trunc);
    out << nlohmann::json{{"weather", std::string(to_string(scene.weather))}}.dump() << '\n';
    if (!out) throw IoError("cannot write " + (dir / "scene.json").string());
}

} // namespace railsynth
