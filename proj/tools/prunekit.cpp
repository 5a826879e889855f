#include <iostream>

#include "prunekit/cli.hpp"

int main(int argc, char** argv) { return prunekit::cli_main(argc, argv, std::cout, std::cerr); }
