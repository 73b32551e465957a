// Line-protocol stub used by the tests. Behaviour is selected by argv[1]:
//   zero | nan | mismatch | sleep | error | garbage   (flow requests)
//   extract <spill_px> <box json>                     (detect / segment)
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>
#include <string>
#include <thread>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "railsynth/optical_flow.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
    const std::string mode = argc > 1 ? argv[1] : "zero";
    int calls = 0;
    for (std::string line; std::getline(std::cin, line);) {
        const json req = json::parse(line);
        const std::string op = req.at("op");
        json resp;
        if (mode == "sleep") std::this_thread::sleep_for(std::chrono::hours(1));
        if (mode == "error") {
            resp = {{"error", "stub failure"}};
        } else if (mode == "garbage") {
            std::cout << "not json" << std::endl;
            continue;
        } else if (op == "flow") {
            const cv::Mat f = cv::imread(req.at("frame_t").get<std::string>());
            cv::Size size = f.size();
            if (mode == "mismatch") size.height += 1;
            railsynth::FlowField flow = railsynth::FlowField::zeros(size);
            if (mode == "nan") flow.dx.at<float>(2, 3) = std::numeric_limits<float>::quiet_NaN();
            if (mode.starts_with("const")) {
                flow.dx.setTo(std::stof(argv[2]));
                flow.dy.setTo(std::stof(argv[3]));
            }
            const fs::path out = fs::path(req.at("frame_t").get<std::string>()).replace_extension(
                ".stub" + std::to_string(calls) + ".rsfl");
            railsynth::write_flow(out, flow);
            resp = {{"flow", out.string()}};
        } else if (op == "detect") {
            resp = {{"boxes", json::parse(argc > 3 ? argv[3] : "[]")}};
        } else if (op == "segment") {
            const cv::Mat img = cv::imread(req.at("image").get<std::string>());
            const int spill = argc > 2 ? std::stoi(argv[2]) : 0;
            const auto b = req.at("box");
            cv::Mat mask = cv::Mat::zeros(img.size(), CV_8UC1);
            const cv::Rect r(cv::Point(b[0].get<int>() - spill, b[1].get<int>() - spill),
                             cv::Point(b[2].get<int>() + spill, b[3].get<int>() + spill));
            mask(r & cv::Rect(0, 0, img.cols, img.rows)).setTo(255);
            const fs::path out = fs::path(req.at("image").get<std::string>()).replace_extension(
                ".mask" + std::to_string(calls) + ".png");
            cv::imwrite(out.string(), mask);
            resp = {{"mask", out.string()}};
        }
        ++calls;
        std::cout << resp.dump() << std::endl;
    }
    return 0;
}
