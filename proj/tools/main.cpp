#include "mambadet/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return mambadet::cli::run(argc, argv, std::cout, std::cerr);
}
