#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stgp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (negative interval, bad knots, non-finite input...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A relative chart was requested outside the region where it is a valid local coordinate.
class ChartRangeError : public Error {
 public:
  using Error::Error;
};

/// A (s, t) location outside the grid hull; the prior is never extrapolated.
class OutOfHull : public Error {
 public:
  using Error::Error;
};

/// File could not be read or written, or has an unsupported format version.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Cholesky pivot failure. `block_row` names the first block row that could not be factorized.
class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite(std::size_t block_row, const std::string& what)
      : Error(what), block_row_(block_row) {}
  std::size_t block_row() const { return block_row_; }

 private:
  std::size_t block_row_;
};

}  // namespace stgp
