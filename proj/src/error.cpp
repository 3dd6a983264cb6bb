// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include "pft/error.hpp"

namespace pft {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::format: return "format";
    case ErrorKind::encoding: return "encoding";
    case ErrorKind::io: return "io";
    case ErrorKind::input: return "input";
    case ErrorKind::data: return "data";
    case ErrorKind::version: return "version";
    case ErrorKind::corruption: return "corruption";
    case ErrorKind::incompatible: return "incompatible";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::contract: return "contract";
    case ErrorKind::state: return "state";
  }
  return "unknown";
}

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config:
      return 1;
    case ErrorKind::format:
    case ErrorKind::encoding:
    case ErrorKind::io:
    case ErrorKind::input:
    case ErrorKind::data:
    case ErrorKind::version:
    case ErrorKind::corruption:
    case ErrorKind::incompatible:
      return 2;
    case ErrorKind::dimension:
    case ErrorKind::numeric:
    case ErrorKind::contract:
    case ErrorKind::state:
      return 3;
  }
  return 3;
}

}  // namespace pft
