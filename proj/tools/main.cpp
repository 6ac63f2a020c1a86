// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

int main(int argc, char** argv) { return tinydrop::cli::main_entry(argc, argv); }
