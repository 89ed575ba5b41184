// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace diplab {

/// Coarse failure category. The CLI prints it as the first token of its
/// one-line error report, so the names are part of the external interface.
enum class ErrorKind {
  shape,
  unbound_leaf,
  invalid_argument,
  budget,
  divergence,
  infeasible,
  config,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::unbound_leaf: return "unbound_leaf";
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::budget: return "budget";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::infeasible: return "infeasible";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) throw Error(kind, msg);
}

}  // namespace diplab
