#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "prunekit/errors.hpp"

namespace prunekit {

// Dense row-major matrix. Vectors are stored as n x 1 matrices.
template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    PRUNEKIT_REQUIRE(data_.size() == rows_ * cols_, "matrix data length must equal rows*cols");
  }
  BasicMatrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      PRUNEKIT_REQUIRE(r.size() == cols_, "ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }
  static BasicMatrix column(std::vector<T> v) {
    const std::size_t n = v.size();
    return BasicMatrix(n, 1, std::move(v));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool same_shape(const BasicMatrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  BasicMatrix& operator+=(const BasicMatrix& o) {
    PRUNEKIT_REQUIRE(same_shape(o), "matrix += shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  BasicMatrix& operator-=(const BasicMatrix& o) {
    PRUNEKIT_REQUIRE(same_shape(o), "matrix -= shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  BasicMatrix& operator*=(T s) {
    for (auto& x : data_) x *= s;
    return *this;
  }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;
using MatrixF = BasicMatrix<float>;

template <typename T>
BasicMatrix<T> operator+(BasicMatrix<T> a, const BasicMatrix<T>& b) { return a += b; }
template <typename T>
BasicMatrix<T> operator-(BasicMatrix<T> a, const BasicMatrix<T>& b) { return a -= b; }
template <typename T>
BasicMatrix<T> operator*(BasicMatrix<T> a, T s) { return a *= s; }

namespace detail {

template <typename T>
using EigenRowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
auto as_eigen(const BasicMatrix<T>& m) {
  return Eigen::Map<const EigenRowMajor<T>>(m.data(), Eigen::Index(m.rows()), Eigen::Index(m.cols()));
}
template <typename T>
auto as_eigen(BasicMatrix<T>& m) {
  return Eigen::Map<EigenRowMajor<T>>(m.data(), Eigen::Index(m.rows()), Eigen::Index(m.cols()));
}

inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

// a (m x k) * b (k x n). Single-threaded, so the summation order is fixed for a given build.
template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows())
    throw ContractViolation("matmul: inner dimensions differ (" + detail::shape_str(a.rows(), a.cols()) +
                            " * " + detail::shape_str(b.rows(), b.cols()) + ")");
  BasicMatrix<T> c(a.rows(), b.cols());
  if (a.cols() == 0) return c;
  detail::as_eigen(c).noalias() = detail::as_eigen(a) * detail::as_eigen(b);
  return c;
}

// a^T * b
template <typename T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.rows() != b.rows()) throw ContractViolation("matmul_tn: row counts differ");
  BasicMatrix<T> c(a.cols(), b.cols());
  if (a.rows() == 0) return c;
  detail::as_eigen(c).noalias() = detail::as_eigen(a).transpose() * detail::as_eigen(b);
  return c;
}

// a * b^T
template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.cols()) throw ContractViolation("matmul_nt: column counts differ");
  BasicMatrix<T> c(a.rows(), b.rows());
  if (a.cols() == 0) return c;
  detail::as_eigen(c).noalias() = detail::as_eigen(a) * detail::as_eigen(b).transpose();
  return c;
}

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a) {
  BasicMatrix<T> t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

template <typename T>
BasicMatrix<T> hadamard(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  PRUNEKIT_REQUIRE(a.same_shape(b), "hadamard: shape mismatch");
  BasicMatrix<T> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] * b[i];
  return c;
}

template <typename T>
T frobenius_norm(const BasicMatrix<T>& a) {
  long double s = 0;
  for (T x : a.values()) s += static_cast<long double>(x) * x;
  return static_cast<T>(std::sqrt(s));
}

template <typename T>
T max_abs(const BasicMatrix<T>& a) {
  T m = 0;
  for (T x : a.values()) m = std::max(m, std::abs(x));
  return m;
}

template <typename T>
bool all_finite(const BasicMatrix<T>& a) {
  return std::all_of(a.values().begin(), a.values().end(), [](T x) { return std::isfinite(x); });
}

// ||a - b||_F / max(floor, ||b||_F)
template <typename T>
T relative_error(const BasicMatrix<T>& a, const BasicMatrix<T>& b, T floor = T(1e-300)) {
  PRUNEKIT_REQUIRE(a.same_shape(b), "relative_error: shape mismatch");
  return frobenius_norm(a - b) / std::max(floor, frobenius_norm(b));
}

template <typename To, typename From>
BasicMatrix<To> cast(const BasicMatrix<From>& m) {
  std::vector<To> v(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) v[i] = static_cast<To>(m[i]);
  return BasicMatrix<To>(m.rows(), m.cols(), std::move(v));
}

}  // namespace prunekit
