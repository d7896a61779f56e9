#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace orthorep {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input file could not be parsed. `line` is 1-based for text formats;
/// `offset` is a byte offset for binary formats. Zero means unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, std::size_t offset, const std::string& what)
      : Error(format(source, line, offset, what)), source_(source), line_(line), offset_(offset) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  static std::string format(const std::string& source, std::size_t line, std::size_t offset,
                            const std::string& what) {
    std::string msg = source;
    if (line) msg += ":" + std::to_string(line);
    if (offset) msg += " (offset " + std::to_string(offset) + ")";
    return msg + ": " + what;
  }

  std::string source_;
  std::size_t line_;
  std::size_t offset_;
};

/// Invalid argument or configuration value, detected before any work is done.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Geometry violates a mesh invariant (degenerate-only, non-finite, ...).
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value produced inside a numeric pipeline.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace orthorep
