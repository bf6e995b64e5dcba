#include <string>
#include <vector>

#include "catnet/cli.hpp"

int main(int argc, char** argv) {
  return catnet::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
