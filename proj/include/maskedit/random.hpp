// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

// Portable deterministic randomness. Standard library distributions differ
// between implementations, so anything that must replay bit-exactly across
// builds draws from these instead.

#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace maskedit {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Top 53 bits of `bits` as a double in [0, 1).
constexpr double unit_interval(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Standard normals: splitmix64 counter stream fed through Box-Muller.
std::vector<double> seeded_normals(std::uint64_t seed, std::size_t count);

}  // namespace maskedit
