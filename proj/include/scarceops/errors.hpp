#pragma once

#include <stdexcept>
#include <string>

namespace scarceops {

// Exit-code contract shared by the CLI and the HTTP error mapper:
// 2 usage, 3 not-found, 4 validation, 5 internal.
class Error : public std::runtime_error {
public:
  Error(int exit_code, const std::string& msg)
      : std::runtime_error(msg), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

private:
  int exit_code_;
};

class UsageError : public Error {
public:
  explicit UsageError(const std::string& m) : Error(2, m) {}
};

class NotFoundError : public Error {
public:
  explicit NotFoundError(const std::string& m) : Error(3, m) {}
};

class ValidationError : public Error {
public:
  explicit ValidationError(const std::string& m) : Error(4, m) {}
};

class InternalError : public Error {
public:
  explicit InternalError(const std::string& m) : Error(5, m) {}
};

// Shape / axis mismatches in the numeric core.
class DimensionError : public ValidationError {
public:
  explicit DimensionError(const std::string& m) : ValidationError(m) {}
};

// NaN/Inf escaped an operation, or a checkpoint failed integrity checks.
class NumericError : public InternalError {
public:
  explicit NumericError(const std::string& m) : InternalError(m) {}
};

// Fingerprints produced by different embedder checkpoints must never be
// compared.
class IncompatibleFingerprintsError : public ValidationError {
public:
  explicit IncompatibleFingerprintsError(const std::string& m)
      : ValidationError(m) {}
};

// Run status may only move pending -> running -> {failed, succeeded}.
class IllegalTransitionError : public ValidationError {
public:
  explicit IllegalTransitionError(const std::string& m)
      : ValidationError(m) {}
};

// A task has no succeeded run yet (its metric is still -inf).
class NoModelError : public NotFoundError {
public:
  explicit NoModelError(const std::string& m) : NotFoundError(m) {}
};

}  // namespace scarceops
