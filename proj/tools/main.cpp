#include <iostream>

#include "dblogit/cli.hpp"

int main(int argc, char** argv) {
  return dblogit::run_cli(argc, argv, std::cout, std::cerr);
}
