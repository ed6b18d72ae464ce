#pragma once

#include <stdexcept>
#include <string>

namespace stgat {

// Process exit codes used by the CLI. Library code throws the typed
// exceptions below; the CLI maps them to these codes.
enum class ExitCode : int {
  Ok = 0,
  Usage = 2,
  Data = 3,
  NonConvergence = 4,
  Internal = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const { return code_; }

 private:
  ExitCode code_;
};

// Bad flags, conflicting options, unreadable config.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ExitCode::Usage, what) {}
};

// Malformed or infeasible inputs: broken CSV rows, duplicate keys,
// missing checkpoints, degenerate quarters.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::Data, what) {}
};

// Iterative procedure failed to reach tolerance (RAS, training blow-ups).
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(ExitCode::NonConvergence, what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_ = 0.0;
};

// Broken internal invariant; always a bug.
class InternalError : public Error {
 public:
  explicit InternalError(const std::string& what)
      : Error(ExitCode::Internal, what) {}
};

}  // namespace stgat
