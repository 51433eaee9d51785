#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "tedrec/error.hpp"

namespace tedrec {

// Non-owning row-major 2-D view. T may be const-qualified.
template <class T>
struct MatrixView {
  T* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  MatrixView() = default;
  MatrixView(T* d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c) {}
  // MatrixView<T> -> MatrixView<const T>
  template <class U>
    requires(std::is_same_v<const U, T> && !std::is_same_v<U, T>)
  MatrixView(const MatrixView<U>& other)  // NOLINT(google-explicit-constructor)
      : data(other.data), rows(other.rows), cols(other.cols) {}

  T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<T> row(std::size_t r) const { return {data + r * cols, cols}; }
  std::size_t size() const { return rows * cols; }
  std::span<T> flat() const { return {data, rows * cols}; }

  // Rows [first, first + count).
  MatrixView row_range(std::size_t first, std::size_t count) const {
    assert(first + count <= rows);
    return {data + first * cols, count, cols};
  }
};

// Owning row-major matrix of arithmetic values.
template <class T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows * cols) {
      throw InvalidArgument("Matrix: value count does not match shape");
    }
  }
  // Nested-list construction for tests and small literals.
  Matrix(std::initializer_list<std::initializer_list<T>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : init) {
      if (r.size() != cols_) throw InvalidArgument("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  template <class U>
  static Matrix cast_from(const Matrix<U>& other) {
    Matrix out(other.rows(), other.cols());
    std::transform(other.flat().begin(), other.flat().end(), out.data_.begin(),
                   [](U v) { return static_cast<T>(v); });
    return out;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  MatrixView<T> view() { return {data_.data(), rows_, cols_}; }
  MatrixView<const T> view() const { return {data_.data(), rows_, cols_}; }
  operator MatrixView<T>() { return view(); }              // NOLINT
  operator MatrixView<const T>() const { return view(); }  // NOLINT

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(T{}); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <class T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
  T s{};
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <class T>
void axpy(T alpha, std::span<const T> x, std::span<T> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

template <class T>
T max_abs_diff(MatrixView<const T> a, MatrixView<const T> b) {
  assert(a.rows == b.rows && a.cols == b.cols);
  T worst{};
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  return worst;
}

// C += A * B      (A: m x k, B: k x n)
template <class T>
void gemm_acc(MatrixView<const T> a, MatrixView<const T> b, MatrixView<T> c) {
  assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    T* ci = c.data + i * c.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const T aik = a(i, k);
      if (aik == T{}) continue;
      const T* bk = b.data + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
    }
  }
}

// C += A^T * B    (A: k x m, B: k x n)
template <class T>
void gemm_tn_acc(MatrixView<const T> a, MatrixView<const T> b, MatrixView<T> c) {
  assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const T* bk = b.data + k * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const T aki = a(k, i);
      if (aki == T{}) continue;
      T* ci = c.data + i * c.cols;
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aki * bk[j];
    }
  }
}

// C += A * B^T    (A: m x k, B: n x k)
template <class T>
void gemm_nt_acc(MatrixView<const T> a, MatrixView<const T> b, MatrixView<T> c) {
  assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const T* ai = a.data + i * a.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const T* bj = b.data + j * b.cols;
      T s{};
      for (std::size_t k = 0; k < a.cols; ++k) s += ai[k] * bj[k];
      c(i, j) += s;
    }
  }
}

template <class T>
Matrix<T> matmul(MatrixView<const T> a, MatrixView<const T> b) {
  Matrix<T> c(a.rows, b.cols);
  gemm_acc<T>(a, b, c.view());
  return c;
}

// Adds a bias row to every row of m.
template <class T>
void add_row_bias(MatrixView<T> m, std::span<const T> bias) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols; ++j) r[j] += bias[j];
  }
}

// Column sums of m accumulated into out.
template <class T>
void column_sums_acc(MatrixView<const T> m, std::span<T> out) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols; ++j) out[j] += r[j];
  }
}

template <class T>
void require_same_shape(MatrixView<const T> a, MatrixView<const T> b, const char* what) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw InvalidArgument(std::string(what) + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                          std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                          std::to_string(b.cols) + ")");
  }
}

}  // namespace tedrec
