// Copyright 2026 The voximp Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace voximp {

enum class ErrorCode {
  kMissingRatings,
  kInvalidRating,
  kZeroVariance,
  kInsufficientData,
  kInvalidDelta,
  kEmptyContent,
  kInsufficientSpeakers,
  kEmptySequence,
  kNotInitialized,
  kStageOrderViolation,
  kShapeError,
  kSplitLeakage,
  kEmptyTarget,
  kMalformedResponse,
  kMissingDimension,
  kMappingFailed,
  kIoError,
  kConfigError,
  kInvalidArgument,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingRatings: return "MissingRatings";
    case ErrorCode::kInvalidRating: return "InvalidRating";
    case ErrorCode::kZeroVariance: return "ZeroVariance";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kInvalidDelta: return "InvalidDelta";
    case ErrorCode::kEmptyContent: return "EmptyContent";
    case ErrorCode::kInsufficientSpeakers: return "InsufficientSpeakers";
    case ErrorCode::kEmptySequence: return "EmptySequence";
    case ErrorCode::kNotInitialized: return "NotInitialized";
    case ErrorCode::kStageOrderViolation: return "StageOrderViolation";
    case ErrorCode::kShapeError: return "ShapeError";
    case ErrorCode::kSplitLeakage: return "SplitLeakage";
    case ErrorCode::kEmptyTarget: return "EmptyTarget";
    case ErrorCode::kMalformedResponse: return "MalformedResponse";
    case ErrorCode::kMissingDimension: return "MissingDimension";
    case ErrorCode::kMappingFailed: return "MappingFailed";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

// All library failures surface as this exception; code() is stable and is
// what the CLI prints in its one-line error record.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace voximp
