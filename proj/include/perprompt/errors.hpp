#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace perprompt {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text (record file, meta file, config, checkpoint).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Well-formed input that violates a shape or range invariant.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// A label that is not part of the dataset vocabulary.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

// Vector or matrix dimensions that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A remote backend failed after the configured number of attempts.
class TransportError : public Error {
 public:
  using Error::Error;
};

class PromptTooShortError : public Error {
 public:
  using Error::Error;
};

class NonFiniteGradientError : public Error {
 public:
  NonFiniteGradientError(const std::string& parameter)
      : Error("non-finite gradient in parameter " + parameter), parameter_(parameter) {}
  const std::string& parameter() const noexcept { return parameter_; }

 private:
  std::string parameter_;
};

}  // namespace perprompt
