// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point. Subcommands are filled in as the library lands.

#include <cstdio>

int main() {
    std::puts("modepinn: no subcommands wired yet");
    return 0;
}
