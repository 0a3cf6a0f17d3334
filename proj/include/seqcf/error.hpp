#pragma once

#include <stdexcept>
#include <string>

namespace seqcf {

// Bad input: malformed files, invalid configuration, violated preconditions.
// The CLI maps these to exit code 1 and the service to 4xx.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what, std::string field = {})
      : std::runtime_error(what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Lookup of something that does not exist (patient id, feature code, vertex).
class NotFoundError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Engine-side failure (I/O, unexpected state). Exit code 2 / HTTP 5xx.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace seqcf
