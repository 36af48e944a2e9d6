// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "ptseg/cli.hpp"

int main(int argc, char** argv) { return ptseg::run_cli(argc, argv, std::cout, std::cerr); }
