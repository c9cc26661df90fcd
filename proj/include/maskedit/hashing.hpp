// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>

namespace maskedit {

// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

}  // namespace maskedit
