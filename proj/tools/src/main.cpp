#include <iostream>

#include "dvtk/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dvtk::cli::run(args, std::cout, std::cerr);
}
