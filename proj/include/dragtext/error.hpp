// Copyright 2026 The dragtext Authors. All Rights Reserved.
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

#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace dragtext {

enum class ErrorCode {
  OutOfBoundsPoint,
  EmptyMask,
  BadConfig,
  ShapeError,
  TimestepError,
  BadBlock,
  OutOfBounds,
  NoActivePoints,
  ZeroInitialDistance,
  ShapeMismatch,
  ResolutionMismatch,
  BackendCapabilityError,
  BackendError,
  Cancelled,
  BadImage,
  TooLarge,
  BadInput,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::OutOfBoundsPoint: return "OutOfBoundsPoint";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::TimestepError: return "TimestepError";
    case ErrorCode::BadBlock: return "BadBlock";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::NoActivePoints: return "NoActivePoints";
    case ErrorCode::ZeroInitialDistance: return "ZeroInitialDistance";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ResolutionMismatch: return "ResolutionMismatch";
    case ErrorCode::BackendCapabilityError: return "BackendCapabilityError";
    case ErrorCode::BackendError: return "BackendError";
    case ErrorCode::Cancelled: return "Cancelled";
    case ErrorCode::BadImage: return "BadImage";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::BadInput: return "BadInput";
  }
  return "Unknown";
}

/// Engine error. `field` names the offending input (e.g. "points.pairs[0].handle")
/// when one can be identified, and is empty otherwise.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string field = {})
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        field_(std::move(field)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& field() const noexcept { return field_; }

 private:
  ErrorCode code_;
  std::string field_;
};

namespace detail {

template <typename... Args>
[[noreturn]] void fail(ErrorCode code, Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  throw Error(code, oss.str());
}

template <typename... Args>
[[noreturn]] void fail_field(ErrorCode code, std::string field, Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  throw Error(code, oss.str(), std::move(field));
}

}  // namespace detail
}  // namespace dragtext
