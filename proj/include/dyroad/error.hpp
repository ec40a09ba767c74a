#pragma once

#include <stdexcept>
#include <string>

namespace dyroad {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by tensor ops when operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed input files; the message carries the file and line.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace dyroad
