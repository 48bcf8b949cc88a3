#pragma once

#include <stdexcept>
#include <string>

namespace gcl {

// Every failure surfaced by the library derives from Error. The CLI maps the
// kind to a process exit code.
enum class ErrorKind { config, data, numeric, equivalence, dimension, index, undefined };

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::equivalence: return "equivalence";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::index: return "index";
    case ErrorKind::undefined: return "undefined";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};

struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorKind::data, w) {}
};

// Non-finite activations or a diverging loss.
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::numeric, w) {}
};

struct EquivalenceError : Error {
  explicit EquivalenceError(const std::string& w) : Error(ErrorKind::equivalence, w) {}
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorKind::dimension, w) {}
};

struct IndexError : Error {
  explicit IndexError(const std::string& w) : Error(ErrorKind::index, w) {}
};

// A rate or score whose denominator is empty.
struct UndefinedError : Error {
  explicit UndefinedError(const std::string& w) : Error(ErrorKind::undefined, w) {}
};

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numeric: return 4;
    case ErrorKind::equivalence: return 5;
    default: return 2;
  }
}

}  // namespace gcl
