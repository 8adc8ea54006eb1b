// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "ota/cli/app.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ota::cli::run(args, std::cout, std::cerr);
}
