#include <vector>

#include "lm/cli.hpp"

int main(int argc, char** argv) {
  return lm::cli::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
