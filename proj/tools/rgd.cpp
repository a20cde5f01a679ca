#include "rgd/cli.hpp"

int main(int argc, char** argv) { return rgd::cli::run(argc, argv); }
