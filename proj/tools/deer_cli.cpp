// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "deer/cli.hpp"

int main(int argc, char** argv) { return deer::cli::run(argc, argv, std::cout, std::cerr); }
