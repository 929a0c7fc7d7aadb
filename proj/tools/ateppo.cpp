#include "ateppo/cli.hpp"

int main(int argc, char** argv) {
  return ateppo::cli_main(std::vector<std::string>(argv + 1, argv + argc));
}
