#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fxq {

/// Machine-readable error category; the CLI prints it on failure.
enum class ErrorKind {
  InvalidArgument,
  DegenerateGroup,
  Shape,
  InvalidState,
  Parse,
  Io,
  Divergence,
  EmptyInput,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error(ErrorKind::InvalidArgument, what) {}
};

/// Raised when a weight group has no nonzero value, so no positive step size exists.
class DegenerateGroup : public Error {
 public:
  explicit DegenerateGroup(const std::string& what, std::string group_id = {})
      : Error(ErrorKind::DegenerateGroup, what), group_id_(std::move(group_id)) {}
  const std::string& group_id() const noexcept { return group_id_; }

 private:
  std::string group_id_;
};

class ShapeError : public Error {
 public:
  ShapeError(const std::string& layer, const std::string& what)
      : Error(ErrorKind::Shape, "layer '" + layer + "': " + what), layer_(layer) {}
  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
};

class InvalidState : public Error {
 public:
  explicit InvalidState(const std::string& what) : Error(ErrorKind::InvalidState, what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : Error(ErrorKind::Parse, what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what) : Error(ErrorKind::Divergence, what) {}
};

class EmptyInput : public Error {
 public:
  explicit EmptyInput(const std::string& what) : Error(ErrorKind::EmptyInput, what) {}
};

}  // namespace fxq
