#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace labelshift {

// Invalid input: bad dimensions, violated preconditions, out-of-range values.
class ArgumentError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Malformed file contents (CSV/JSON).
class ParseError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Non-finite values encountered mid-computation.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Confusion matrix too ill-conditioned to invert.
class SingularMatrixError : public std::runtime_error {
public:
  SingularMatrixError(const std::string& msg, double condition)
      : std::runtime_error(msg), condition_(condition) {}
  double condition() const { return condition_; }

private:
  double condition_;
};

// A prediction row whose re-weighted mass is zero.
class DegenerateRowError : public std::runtime_error {
public:
  DegenerateRowError(const std::string& msg, std::size_t row)
      : std::runtime_error(msg), row_(row) {}
  std::size_t row() const { return row_; }

private:
  std::size_t row_;
};

// A requested shift assigns positive prior to a class absent from the data.
class UnsatisfiableShiftError : public std::runtime_error {
public:
  UnsatisfiableShiftError(const std::string& msg, std::size_t class_index)
      : std::runtime_error(msg), class_index_(class_index) {}
  std::size_t class_index() const { return class_index_; }

private:
  std::size_t class_index_;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace labelshift
