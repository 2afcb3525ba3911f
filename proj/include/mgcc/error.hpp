#pragma once

#include <stdexcept>
#include <string>

namespace mgcc {

// Exit codes used by the command-line tool.
enum class ErrorKind : int {
  kConfig = 2,
  kData = 3,
  kNumerical = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& what) : Error(ErrorKind::kNumerical, what) {}
};

}  // namespace mgcc
