// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bitsnap {

enum class ErrorCode {
  kInvalidArgument,
  kBadMagic,
  kUnsupportedVersion,
  kTruncatedPayload,
  kShapeMismatch,
  kDtypeMismatch,
  kNameMismatch,
  kInconsistentRecord,
  kStructureMismatch,
  kMissingLink,
  kCorruptManifest,
  kTrackerMismatch,
  kParseError,
  kNotFound,
  kIo,
  kLocked,
  kBackpressure,
  kStaleIteration,
  kChecksumMismatch,
  kColdStart,
};

std::string_view to_string(ErrorCode code);

/// All library failures are reported through this type; `code()` lets callers
/// branch on the failure class without parsing the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace bitsnap
