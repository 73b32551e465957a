// Writes the procedural desk fixture (scenes and object images) to a directory.
#include <iostream>

#include <CLI11.hpp>

#include "railsynth/desk_fixture.hpp"
#include "railsynth/errors.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Render the procedural desk fixture", "railsynth-fixture"};
    railsynth::DeskFixtureOptions opt;
    std::string out;
    app.add_option("--out", out)->required();
    app.add_option("--seed", opt.seed);
    app.add_option("--scenes-per-weather", opt.scenes_per_weather)->check(CLI::PositiveNumber);
    app.add_option("--objects-per-category", opt.objects_per_category)->check(CLI::PositiveNumber);
    app.add_option("--width", opt.frame.width)->check(CLI::Range(32, 4096));
    app.add_option("--height", opt.frame.height)->check(CLI::Range(32, 4096));
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }
    try {
        railsynth::write_desk_fixture(opt, out);
    } catch (const railsynth::Error& e) {
        std::cerr << "railsynth-fixture: " << e.what() << "\n";
        return e.is_user_error() ? 1 : 2;
    }
    return 0;
}
