#include <iostream>
#include <string>
#include <vector>

#include "fedua/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fedua::cli::run(args, std::cout, std::cerr);
}
