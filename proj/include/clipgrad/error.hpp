#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace clipgrad {

/// Machine-readable failure class. The CLI prints the name and maps it to
/// an exit code.
enum class ErrorCategory {
  domain,
  config,
  precondition,
  io,
  unsupported_metric,
  parse,
};

constexpr std::string_view to_string(ErrorCategory c) noexcept {
  switch (c) {
    case ErrorCategory::domain: return "domain";
    case ErrorCategory::config: return "config";
    case ErrorCategory::precondition: return "precondition";
    case ErrorCategory::io: return "io";
    case ErrorCategory::unsupported_metric: return "unsupported_metric";
    case ErrorCategory::parse: return "parse";
  }
  return "unknown";
}

constexpr int exit_code(ErrorCategory c) noexcept {
  switch (c) {
    case ErrorCategory::domain: return 3;
    case ErrorCategory::config: return 2;
    case ErrorCategory::precondition: return 4;
    case ErrorCategory::io: return 5;
    case ErrorCategory::unsupported_metric: return 6;
    case ErrorCategory::parse: return 7;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

struct DomainError : Error {
  explicit DomainError(const std::string& what)
      : Error(ErrorCategory::domain, what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what)
      : Error(ErrorCategory::config, what) {}
};

struct PreconditionError : Error {
  explicit PreconditionError(const std::string& what)
      : Error(ErrorCategory::precondition, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorCategory::io, what) {}
};

struct UnsupportedMetricError : Error {
  explicit UnsupportedMetricError(const std::string& what)
      : Error(ErrorCategory::unsupported_metric, what) {}
};

struct ParseError : Error {
  explicit ParseError(const std::string& what)
      : Error(ErrorCategory::parse, what) {}
};

}  // namespace clipgrad
