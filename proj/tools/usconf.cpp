#include "usconf/cli.hpp"

int main(int argc, char **argv) {
  return usconf::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
