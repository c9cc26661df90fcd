// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/error.hpp"

namespace maskedit {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kEmptyMask: return "empty-mask";
    case ErrorCode::kCoverage: return "coverage";
    case ErrorCode::kInvalidMask: return "invalid-mask";
    case ErrorCode::kInversion: return "inversion";
    case ErrorCode::kInstrumentation: return "instrumentation";
    case ErrorCode::kIntervention: return "intervention";
    case ErrorCode::kSchedule: return "schedule";
    case ErrorCode::kPolicy: return "policy";
    case ErrorCode::kDegenerateMap: return "degenerate-map";
    case ErrorCode::kInvalidRequest: return "invalid-request";
    case ErrorCode::kLoad: return "load";
    case ErrorCode::kMetric: return "metric";
    case ErrorCode::kTransport: return "transport";
    case ErrorCode::kEmptyReport: return "empty-report";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace maskedit
