#include <iostream>

#include "signglyph/cli.hpp"

int main(int argc, char** argv) { return signglyph::run_cli(argc, argv, std::cout, std::cerr); }
