// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/random.hpp"

#include <cmath>
#include <numbers>

namespace maskedit {

std::vector<double> seeded_normals(std::uint64_t seed, std::size_t count) {
  std::vector<double> out;
  out.reserve(count + 1);
  std::uint64_t counter = seed;
  while (out.size() < count) {
    // 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - unit_interval(splitmix64(counter++));
    const double u2 = unit_interval(splitmix64(counter++));
    const double r = std::sqrt(-2.0 * std::log(u1));
    out.push_back(r * std::cos(2.0 * std::numbers::pi * u2));
    out.push_back(r * std::sin(2.0 * std::numbers::pi * u2));
  }
  out.resize(count);
  return out;
}

}  // namespace maskedit
