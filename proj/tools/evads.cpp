#include <string>
#include <vector>

#include "evads/cli.hpp"

int main(int argc, char** argv) {
  return evads::cli::dispatch(std::vector<std::string>(argv + 1, argv + argc));
}
