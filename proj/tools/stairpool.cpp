#include <iostream>
#include <string>
#include <vector>

#include "stairpool/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return stairpool::run_cli(args, std::cout, std::cerr);
}
