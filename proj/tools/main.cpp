#include <iostream>

#include "netsurgeon/cli.hpp"

int main(int argc, char** argv) { return netsurgeon::run_cli(argc, argv, std::cout, std::cerr); }
