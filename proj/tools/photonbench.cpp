#include <photonbench/cli.hpp>

#include <iostream>

int main(int argc, char **argv) { return photonbench::cli::run(argc, argv, std::cout, std::cerr); }
