#include <iostream>
#include <vector>

#include "macnet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return macnet::dispatch(args, std::cout, std::cerr);
}
