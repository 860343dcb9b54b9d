#include <iostream>

#include "geoquery/commands.hpp"

int main(int argc, char** argv) { return geoquery::run_cli(argc, argv, std::cout, std::cerr); }
