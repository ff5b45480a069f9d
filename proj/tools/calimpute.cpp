#include <iostream>

#include "calimpute/cli.hpp"

int main(int argc, char** argv) { return calimpute::run_cli(argc, argv, std::cout, std::cerr); }
