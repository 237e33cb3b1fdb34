#include <iostream>
#include <string>
#include <vector>

#include "gessl/experiment.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return gessl::cli_dispatch(args, std::cout, std::cerr);
}
