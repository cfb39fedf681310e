#include <iostream>

#include "dloo/cli.hpp"

int main(int argc, char** argv) {
  return dloo::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
