#include <iostream>
#include <string>
#include <vector>

#include "cut/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cut::cli::run(args, std::cout, std::cerr);
}
