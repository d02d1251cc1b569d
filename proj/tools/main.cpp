#include "ausynth/cli.hpp"

int main(int argc, char** argv) { return ausynth::cli::run(argc, argv); }
