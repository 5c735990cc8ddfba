#include <iostream>

#include "epiglab/cli.hpp"

int main(int argc, char** argv) { return epiglab::cli::main(argc, argv, std::cout, std::cerr); }
