#include <iostream>
#include <string>
#include <vector>

#include "powerflow/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return powerflow::run_cli(args, std::cout, std::cerr);
}
