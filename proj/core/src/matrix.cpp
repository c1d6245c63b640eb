#include "tra/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tra/errors.hpp"

namespace tra {

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix Matrix::from_data(std::size_t rows, std::size_t cols, Vec data) {
  if (data.size() != rows * cols) {
    throw InvalidArgumentError("matrix data length " + std::to_string(data.size()) +
                               " does not equal rows*cols = " + std::to_string(rows * cols));
  }
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw InvalidArgumentError("matrix data contains a non-finite entry");
    }
  }
  Matrix m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.data_ = std::move(data);
  return m;
}

void Matrix::fill(double value) {
  std::fill(data_.begin(), data_.end(), value);
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace tra
