#include <iostream>

#include "multiads/cli.hpp"

int main(int argc, char** argv) { return multiads::run_cli(argc, argv, std::cout, std::cerr); }
