#include <iostream>

#include "ncode/cli.hpp"

int main(int argc, char** argv) { return ncode::cli_main(argc, argv, std::cout, std::cerr); }
