#include <iostream>
#include <string>
#include <vector>

#include "mmfusion/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mmf::cli::run_command(args, std::cout, std::cerr);
}
