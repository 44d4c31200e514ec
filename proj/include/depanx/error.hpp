#pragma once

#include <stdexcept>
#include <string>

namespace depanx {

/// Failure categories; the CLI maps these onto process exit codes.
enum class ErrorKind {
  Validation,  // bad input or configuration (exit 1)
  Runtime,     // I/O, numeric divergence, missing artifacts (exit 2)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }
  /// Short machine-readable identifier, e.g. "E_SCORE_RANGE".
  const std::string& code() const noexcept { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

class ValidationError : public Error {
 public:
  ValidationError(std::string code, const std::string& message)
      : Error(ErrorKind::Validation, std::move(code), message) {}
};

class RuntimeError : public Error {
 public:
  RuntimeError(std::string code, const std::string& message)
      : Error(ErrorKind::Runtime, std::move(code), message) {}
};

}  // namespace depanx
