// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

#include "msldp/cli.hpp"

int main(int argc, char** argv) { return msldp::run_experiment_cli(argc, argv); }
