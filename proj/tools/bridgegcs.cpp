#include <iostream>

#include "bridgegcs/cli/app.hpp"

int main(int argc, char** argv) { return bridgegcs::cli::run_cli(argc, argv, std::cout, std::cerr); }
