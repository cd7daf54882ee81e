#pragma once

#include <stdexcept>
#include <string>

namespace fresco {

// Broad failure categories. The CLI maps these onto process exit codes.
enum class ErrorKind {
  argument,
  bounds,
  shape,
  domain,
  coverage,
  config,
  io,
  format,
  protocol,
  metric,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define FRESCO_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

FRESCO_DEFINE_ERROR(ArgumentError, argument)
FRESCO_DEFINE_ERROR(BoundsError, bounds)
FRESCO_DEFINE_ERROR(ShapeError, shape)
FRESCO_DEFINE_ERROR(DomainError, domain)
FRESCO_DEFINE_ERROR(CoverageError, coverage)
FRESCO_DEFINE_ERROR(ConfigError, config)
FRESCO_DEFINE_ERROR(IoError, io)
FRESCO_DEFINE_ERROR(FormatError, format)
FRESCO_DEFINE_ERROR(MetricError, metric)

#undef FRESCO_DEFINE_ERROR

// Failures talking to an external worker process. Each carries the index of
// the tile (or frame) whose request was in flight, or -1 if none.
class ProtocolError : public Error {
 public:
  ProtocolError(const std::string& what, long item)
      : Error(ErrorKind::protocol, decorate(what, item)), item_(item) {}

  long item() const noexcept { return item_; }

 private:
  static std::string decorate(const std::string& what, long item) {
    if (item < 0) return what;
    return what + " (item " + std::to_string(item) + ")";
  }

  long item_;
};

class BrokenPipeError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class TimeoutError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class MalformedFrameError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

// A well-formed response whose tensor does not match the request.
class ResponseShapeError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

// The worker answered with an explicit error message.
class RemoteError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

// Failure inside a sampler step, wrapping (via std::nested_exception) the
// original error. step and tile are -1 when not applicable.
class SamplerError : public Error {
 public:
  SamplerError(ErrorKind kind, const std::string& what, long step, long tile)
      : Error(kind, what), step_(step), tile_(tile) {}

  long step() const noexcept { return step_; }
  long tile() const noexcept { return tile_; }

 private:
  long step_;
  long tile_;
};

}  // namespace fresco
