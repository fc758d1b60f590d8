#pragma once

#include <stdexcept>
#include <string>

namespace jv {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Shape or length disagreement between operands.
class DimensionError : public Error {
public:
  using Error::Error;
};

// Input is numerically degenerate (zero vector, coincident landmarks, ...).
class DegenerateError : public Error {
public:
  using Error::Error;
};

// Malformed file contents or configuration.
class FormatError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
  using Error::Error;
};

}  // namespace jv
