#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace carunet {

enum class ErrorKind {
  usage,    // bad flags or configuration
  data,     // missing files, undecodable images, malformed checkpoints
  shape,    // tensor shape / architecture mismatch
  numeric,  // NaN/Inf, non-finite loss
  state,    // API misuse (e.g. backward twice on one tape)
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::data: return "data";
    case ErrorKind::shape: return "shape";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::state: return "state";
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

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace carunet
