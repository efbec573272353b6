#include <iostream>

#include "ss3m/cli.hpp"

int main(int argc, char** argv) { return ss3m::run_cli(argc, argv, std::cout, std::cerr); }
