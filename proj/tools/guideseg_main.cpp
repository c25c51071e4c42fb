// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>
#include <vector>

#include "guideseg/cli/cli.hpp"
#include "guideseg/numerics/memory.hpp"

int main(int argc, char** argv) {
  guideseg::num::keep_heap_resident();
  const std::vector<std::string> args(argv + 1, argv + argc);
  return guideseg::cli::run_command(args, std::cout, std::cerr);
}
