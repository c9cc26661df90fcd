// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace maskedit {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitPipeline = 3;

// `args` excludes the program name. Subcommands: edit, bench, serve,
// segment-stub.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace maskedit
