// SPDX-License-Identifier: Apache-2.0
#include <vector>

#include "fat/harness.hpp"

int main(int argc, char** argv) {
  return fat::cli_main(std::vector<std::string>(argv + 1, argv + argc));
}
