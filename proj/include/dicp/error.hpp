#pragma once

#include <stdexcept>
#include <string>

namespace dicp {

/// Failure category; the CLI maps these onto its exit codes.
enum class ErrorKind { config, data, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

/// Rotation angle too close to +-pi for the logarithm to be well defined.
struct SingularityError : NumericalError {
  explicit SingularityError(const std::string& what) : NumericalError(what) {}
};

/// Every correspondence was gated to zero weight.
struct NoCorrespondencesError : NumericalError {
  NoCorrespondencesError() : NumericalError("no effective correspondences") {}
};

}  // namespace dicp
