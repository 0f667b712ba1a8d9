#pragma once

#include <stdexcept>
#include <string>

namespace spirit {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values, out-of-range arguments, malformed parameters.
class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what) : Error("invalid input: " + what) {}
};

/// Factorization breakdown (e.g. a non-positive Cholesky pivot).
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error("numerical error: " + what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape error: " + what) {}
};

/// Memory writes must carry strictly increasing frame indices.
class OrderingError : public Error {
 public:
  explicit OrderingError(const std::string& what) : Error("ordering error: " + what) {}
};

}  // namespace spirit
