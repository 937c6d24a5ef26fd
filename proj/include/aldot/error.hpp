#pragma once

#include <stdexcept>
#include <string>

namespace aldot {

/// Broad failure category. The CLI maps each kind onto a stable exit code.
enum class ErrorKind {
  validation,  // bad arguments, malformed documents, violated invariants
  detector,    // external detector timeout, crash, or protocol violation
  io,          // filesystem failures
  not_found,   // missing session, frame, or dataset
  conflict,    // state-machine violations (e.g. verdict on finalized session)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class NotFoundError : public Error {
 public:
  explicit NotFoundError(const std::string& what) : Error(ErrorKind::not_found, what) {}
};

class ConflictError : public Error {
 public:
  explicit ConflictError(const std::string& what) : Error(ErrorKind::conflict, what) {}
};

const char* to_string(ErrorKind kind) noexcept;

}  // namespace aldot
