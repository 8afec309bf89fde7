#pragma once

#include <stdexcept>
#include <string>

namespace coldgraph {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Missing file or prerequisite artifact; the CLI maps this to exit code 2.
class MissingInputError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss during training; the CLI maps this to exit code 3.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public Error {
 public:
  using Error::Error;
};

}  // namespace coldgraph
