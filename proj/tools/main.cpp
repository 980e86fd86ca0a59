#include <iostream>

#include "diddml/cli.hpp"

int main(int argc, char** argv) { return diddml::run_cli(argc, argv, std::cout, std::cerr); }
