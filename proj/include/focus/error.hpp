// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace focus {

enum class ErrorCode {
  kDimensionMismatch,
  kInvalidArgument,
  kOutOfRange,
  kCommittedWrite,
  kBlockComplete,
  kInvariantViolation,
  kConfig,
  kTrace,
  kIo,
  kSchema,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kCommittedWrite: return "committed_write";
    case ErrorCode::kBlockComplete: return "block_complete";
    case ErrorCode::kInvariantViolation: return "invariant_violation";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kTrace: return "trace";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kSchema: return "schema";
  }
  return "unknown";
}

// All library failures are reported through this type; `code()` is stable
// and is what the CLI maps onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace focus
