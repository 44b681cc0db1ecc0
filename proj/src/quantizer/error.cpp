#include "fxq/error.hpp"

namespace fxq {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::DegenerateGroup: return "degenerate_group";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::InvalidState: return "invalid_state";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::EmptyInput: return "empty_input";
  }
  return "unknown";
}

}  // namespace fxq
