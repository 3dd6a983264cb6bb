// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pft {

enum class ErrorKind {
  config,        // invalid configuration or usage
  format,        // malformed file or record
  encoding,      // invalid UTF-8
  io,            // filesystem failure
  input,         // bad caller-supplied data (ids out of range, empty prompt, ...)
  data,          // dataset-level problem (empty dataset, ...)
  version,       // unknown archive version
  corruption,    // checksum mismatch
  incompatible,  // adapter/base fingerprint mismatch
  dimension,     // shape mismatch
  numeric,       // NaN/Inf
  contract,      // precondition violated by caller code
  state,         // object in the wrong state (double merge, ...)
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Process exit code for an error kind: 1 config/usage, 2 data/format, 3 runtime.
int exit_code_for(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace pft
