#include "railsynth/cli.hpp"

int main(int argc, char** argv) { return railsynth::dispatch({argv, argv + argc}); }
