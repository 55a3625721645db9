#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "labelshift/errors.hpp"

namespace labelshift {

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
};

// Point on the probability simplex. Construction validates nonnegativity and
// renormalizes when the sum is within 1e-6 of one; larger deviations are
// rejected.
class SimplexVector {
public:
  static constexpr double kSumTolerance = 1e-9;
  static constexpr double kRenormTolerance = 1e-6;

  explicit SimplexVector(std::vector<double> values);

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }

private:
  std::vector<double> values_;
};

// Finite log-odds vector.
class LogitVector {
public:
  explicit LogitVector(std::vector<double> values);

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }

private:
  std::vector<double> values_;
};

// log sum_i exp(v_i) via max-subtraction.
double log_sum_exp(std::span<const double> v);

SimplexVector softmax(const LogitVector& z);
void softmax_inplace(std::span<const double> z, std::span<double> out);

// Euclidean projection onto the probability simplex (sort-and-threshold).
SimplexVector project_to_simplex(std::span<const double> v);

std::size_t argmax_row(std::span<const double> row);

}  // namespace labelshift
