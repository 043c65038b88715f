// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kdsr {

enum class ErrorKind {
  dimension,
  argument,
  numeric,
  parse,
  shape,
  config,
  file,
  checkpoint,
  training,
  split,
  lookup,
  degenerate,
  empty_dataset,
  undefined_correlation,
  self_pair,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::argument: return "argument";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::parse: return "parse";
    case ErrorKind::shape: return "shape";
    case ErrorKind::config: return "config";
    case ErrorKind::file: return "file";
    case ErrorKind::checkpoint: return "checkpoint";
    case ErrorKind::training: return "training";
    case ErrorKind::split: return "split";
    case ErrorKind::lookup: return "lookup";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::empty_dataset: return "empty-dataset";
    case ErrorKind::undefined_correlation: return "undefined-correlation";
    case ErrorKind::self_pair: return "self-pair";
  }
  return "unknown";
}

/// Every failure raised by the library. The kind is stable and machine
/// readable; the message is for humans.
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

}  // namespace kdsr
