#include "ncl/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ncl/error.hpp"

namespace ncl {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows_ * cols_, ErrorCode::kShapeMismatch,
          "matrix data has " + std::to_string(data_.size()) + " values, expected " +
              std::to_string(rows_ * cols_));
}

void Matrix::resize(std::size_t rows, std::size_t cols) {
  rows_ = rows;
  cols_ = cols;
  data_.assign(rows * cols, 0.0);
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::kShapeMismatch,
          "max_abs_diff on differently shaped matrices");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.flat()[i] - b.flat()[i]));
  return worst;
}

Matrix gather_rows(const Matrix& source, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), source.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < source.rows(), ErrorCode::kOutOfRange, "gather_rows index out of range");
    std::copy_n(source.row(indices[i]).begin(), source.cols(), out.row(i).begin());
  }
  return out;
}

}  // namespace ncl
