// mskseq/matrix.hpp
//
// Row-major dense matrix, the one numeric container used everywhere.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace mskseq {

template <typename Real>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Real value = Real(0))
      : rows_(rows), cols_(cols), data_(rows * cols, value) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  Real operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<Real> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const Real> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::vector<Real>& raw() { return data_; }
  const std::vector<Real>& raw() const { return data_; }

  void fill(Real v) { data_.assign(data_.size(), v); }

  bool same_shape(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool all_finite() const {
    for (Real v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename Other>
  Matrix<Other> cast() const {
    Matrix<Other> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i)
      out.data()[i] = static_cast<Other>(data_[i]);
    return out;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

// C += A * B, plain triple loop ordered for row-major locality.
template <typename Real>
void matmul_acc(const Matrix<Real>& a, const Matrix<Real>& b, Matrix<Real>& c) {
  if (a.cols() != b.rows() || c.rows() != a.rows() || c.cols() != b.cols())
    throw std::invalid_argument("matmul_acc: shape mismatch");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    Real* crow = c.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = a(i, p);
      const Real* brow = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename Real>
Matrix<Real> matmul(const Matrix<Real>& a, const Matrix<Real>& b) {
  Matrix<Real> c(a.rows(), b.cols());
  matmul_acc(a, b, c);
  return c;
}

// C += A^T * B
template <typename Real>
void matmul_at_acc(const Matrix<Real>& a, const Matrix<Real>& b, Matrix<Real>& c) {
  if (a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols())
    throw std::invalid_argument("matmul_at_acc: shape mismatch");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t p = 0; p < n; ++p) {
    const Real* arow = a.data() + p * k;
    const Real* brow = b.data() + p * m;
    for (std::size_t i = 0; i < k; ++i) {
      Real* crow = c.data() + i * m;
      const Real api = arow[i];
      for (std::size_t j = 0; j < m; ++j) crow[j] += api * brow[j];
    }
  }
}

// C += A * B^T
template <typename Real>
void matmul_bt_acc(const Matrix<Real>& a, const Matrix<Real>& b, Matrix<Real>& c) {
  if (a.cols() != b.cols() || c.rows() != a.rows() || c.cols() != b.rows())
    throw std::invalid_argument("matmul_bt_acc: shape mismatch");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const Real* arow = a.data() + i * k;
    Real* crow = c.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const Real* brow = b.data() + j * k;
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

}  // namespace mskseq
