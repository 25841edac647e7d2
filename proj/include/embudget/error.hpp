#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace embudget {

// Base of every error thrown by the library. `kind()` is a stable
// machine-readable tag used by the CLI's JSON error output.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error("parse_error", "line " + std::to_string(line) + ": " + message),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class EmptyLogError : public Error {
 public:
  explicit EmptyLogError(const std::string& message)
      : Error("empty_log", message) {}
};

class DegenerateSplitError : public Error {
 public:
  explicit DegenerateSplitError(const std::string& message)
      : Error("degenerate_split", message) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message)
      : Error("validation_error", message) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& message)
      : Error("index_error", message) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& message)
      : Error("format_error", message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message)
      : Error("config_error", message) {}
};

class InfeasibleBudgetError : public Error {
 public:
  explicit InfeasibleBudgetError(const std::string& message,
                                 std::optional<int> segment = std::nullopt)
      : Error("infeasible_budget", message), segment_(segment) {}

  const std::optional<int>& segment() const noexcept { return segment_; }

 private:
  std::optional<int> segment_;
};

}  // namespace embudget
