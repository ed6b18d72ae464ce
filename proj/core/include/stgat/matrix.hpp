#pragma once

#include <cstddef>
#include <vector>

#include "stgat/errors.hpp"

namespace stgat {

// Dense row-major matrix for the plain (non-autodiff) numeric code:
// RAS balancing, metric computation, snapshot feature blocks.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), d_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return d_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const {
    return d_[i * cols_ + j];
  }

  double* data() { return d_.data(); }
  const double* data() const { return d_.data(); }
  const std::vector<double>& values() const { return d_; }
  std::vector<double>& values() { return d_; }

  double row_sum(std::size_t i) const {
    double s = 0.0;
    for (std::size_t j = 0; j < cols_; ++j) s += d_[i * cols_ + j];
    return s;
  }
  double col_sum(std::size_t j) const {
    double s = 0.0;
    for (std::size_t i = 0; i < rows_; ++i) s += d_[i * cols_ + j];
    return s;
  }

  bool operator==(const Matrix& o) const = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> d_;
};

}  // namespace stgat
