// SPDX-License-Identifier: Apache-2.0
#include "ilore/cli.hpp"

int main(int argc, char** argv) { return ilore::cli::run(argc, argv); }
