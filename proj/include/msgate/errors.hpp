#pragma once

#include <stdexcept>
#include <string>

namespace msgate {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConvergenceError : Error {
  using Error::Error;
};
struct InstabilityError : Error {
  using Error::Error;
};
struct RangeError : Error {
  using Error::Error;
};
struct ResonanceError : Error {
  using Error::Error;
};
struct NoRootError : Error {
  using Error::Error;
};
struct InsufficientDataError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ProtocolError : Error {
  using Error::Error;
};
struct TruncationError : Error {
  using Error::Error;
};

// raised by the pipeline, carries the failing stage
struct StageError : Error {
  std::string stage;
  StageError(std::string stage_name, const std::string& what)
      : Error(stage_name + ": " + what), stage(std::move(stage_name)) {}
};

}  // namespace msgate
