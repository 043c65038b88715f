// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "kdsr/cli/app.hpp"

int main(int argc, char** argv) { return kdsr::cli::run(argc, argv, std::cout, std::cerr); }
