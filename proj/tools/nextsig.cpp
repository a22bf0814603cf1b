// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include "nextsig/cli.hpp"

int main(int argc, char** argv) { return nextsig::run_cli(argc, argv); }
