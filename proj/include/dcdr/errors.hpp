#pragma once

#include <stdexcept>
#include <string>

namespace dcdr {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class InvalidPermutation : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

/// Requested size exceeds what dense permutation-space math can hold.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// The observed noisy sequence has zero probability under the forward process.
class InconsistentEvidence : public Error {
 public:
  using Error::Error;
};

class InvalidMatrix : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column = 0)
      : Error(what + " (line " + std::to_string(line) +
              (column ? ", column " + std::to_string(column) : std::string()) + ")"),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

}  // namespace dcdr
