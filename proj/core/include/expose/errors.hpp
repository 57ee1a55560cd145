#pragma once

#include <stdexcept>
#include <string>

namespace expose {

/// Broad failure classes; each maps onto one CLI exit code.
enum class ErrorKind {
  Usage,        // bad configuration or arguments
  Data,         // missing, malformed, corrupted or incompatible artifacts
  Numeric,      // non-finite values, degenerate models
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define EXPOSE_DEFINE_ERROR(Name, Kind)                                          \
  class Name : public Error {                                                    \
   public:                                                                       \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {}     \
  };

EXPOSE_DEFINE_ERROR(ConfigError, Usage)
EXPOSE_DEFINE_ERROR(GridError, Usage)
EXPOSE_DEFINE_ERROR(DomainError, Usage)
EXPOSE_DEFINE_ERROR(ShapeError, Data)
EXPOSE_DEFINE_ERROR(InputError, Data)
EXPOSE_DEFINE_ERROR(IoError, Data)
EXPOSE_DEFINE_ERROR(CorruptionError, Data)
EXPOSE_DEFINE_ERROR(CompatibilityError, Data)
EXPOSE_DEFINE_ERROR(InsufficientDataError, Data)
EXPOSE_DEFINE_ERROR(NumericError, Numeric)
EXPOSE_DEFINE_ERROR(TrainingError, Numeric)
EXPOSE_DEFINE_ERROR(ScoringError, Numeric)
EXPOSE_DEFINE_ERROR(RefinementError, Numeric)
EXPOSE_DEFINE_ERROR(DegenerateModelError, Numeric)

#undef EXPOSE_DEFINE_ERROR

/// Process exit code for an error class: 1 usage, 2 data/compat, 3 numeric.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return 1;
    case ErrorKind::Data: return 2;
    case ErrorKind::Numeric: return 3;
  }
  return 1;
}

}  // namespace expose
