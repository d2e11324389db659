// Copyright 2026 The memvr-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>
#include <vector>

#include "memvr/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return memvr::cli::run(args, std::cout, std::cerr);
}
