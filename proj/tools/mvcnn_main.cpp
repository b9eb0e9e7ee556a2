#include <string>
#include <vector>

#include "mvcnn/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mvcnn::cli::run(args);
}
