// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace maskedit {

enum class ErrorCode {
  kDimension,
  kEmptyMask,
  kCoverage,
  kInvalidMask,
  kInversion,
  kInstrumentation,
  kIntervention,
  kSchedule,
  kPolicy,
  kDegenerateMap,
  kInvalidRequest,
  kLoad,
  kMetric,
  kTransport,
  kEmptyReport,
  kIo,
};

const char* error_code_name(ErrorCode code);

// All library failures derive from this; `code()` lets callers route on the
// failure class without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& message)
      : Error(ErrorCode::kDimension, message) {}
};

class EmptyMaskError : public Error {
 public:
  explicit EmptyMaskError(const std::string& message)
      : Error(ErrorCode::kEmptyMask, message) {}
};

class CoverageError : public Error {
 public:
  explicit CoverageError(const std::string& message)
      : Error(ErrorCode::kCoverage, message) {}
};

}  // namespace maskedit
