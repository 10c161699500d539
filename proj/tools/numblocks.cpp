#include <iostream>

#include "numblocks/harness/cli.hpp"

int main(int argc, char** argv) {
  return numblocks::harness::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
