#include "xpr/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return xpr::run_cli(argc, argv, std::cout, std::cerr); }
