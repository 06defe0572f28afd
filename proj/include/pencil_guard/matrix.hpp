#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "pencil_guard/error.hpp"

namespace pencil_guard {

using cdouble = std::complex<double>;

template <typename T>
inline constexpr bool is_complex_v = false;
template <typename T>
inline constexpr bool is_complex_v<std::complex<T>> = true;

/// Dense row-major matrix. Complex and real instantiations are the carriers for
/// every factor, spectrogram and weight block in the library.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      fail(ErrorCode::DimensionMismatch, "payload size does not match " +
                                             std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) fail(ErrorCode::DimensionMismatch, "ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  static Matrix diagonal(std::span<const T> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool square() const noexcept { return rows_ == cols_; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<T> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const T> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](const T& v) {
      if constexpr (is_complex_v<T>) {
        return std::isfinite(v.real()) && std::isfinite(v.imag());
      } else {
        return std::isfinite(v);
      }
    });
  }

  Matrix& operator+=(const Matrix& o) {
    check_same_shape(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    check_same_shape(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  Matrix& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, T s) { return a *= s; }
  friend Matrix operator*(T s, Matrix a) { return a *= s; }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  void check_same_shape(const Matrix& o) const {
    if (o.rows_ != rows_ || o.cols_ != cols_) {
      fail(ErrorCode::DimensionMismatch, "shape " + std::to_string(rows_) + "x" +
                                             std::to_string(cols_) + " vs " +
                                             std::to_string(o.rows_) + "x" + std::to_string(o.cols_));
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using ComplexMatrix = Matrix<cdouble>;
using RealMatrix = Matrix<double>;
using ComplexVector = std::vector<cdouble>;

inline double abs2(cdouble z) noexcept { return z.real() * z.real() + z.imag() * z.imag(); }
inline double abs2(double x) noexcept { return x * x; }

template <typename T>
double frobenius_norm(const Matrix<T>& m) {
  double s = 0.0;
  for (const auto& v : m.data()) s += abs2(v);
  return std::sqrt(s);
}

template <typename T>
Matrix<T> adjoint(const Matrix<T>& m) {
  Matrix<T> out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if constexpr (is_complex_v<T>) {
        out(j, i) = std::conj(m(i, j));
      } else {
        out(j, i) = m(i, j);
      }
    }
  }
  return out;
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorCode::DimensionMismatch, "matmul inner dimensions " + std::to_string(a.cols()) +
                                           " vs " + std::to_string(b.rows()));
  }
  Matrix<T> c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto crow = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      if (aik == T{}) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

template <typename T>
std::vector<T> matvec(const Matrix<T>& a, std::span<const T> x) {
  if (a.cols() != x.size()) fail(ErrorCode::DimensionMismatch, "matvec length mismatch");
  std::vector<T> y(a.rows(), T{});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T acc{};
    auto arow = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) acc += arow[j] * x[j];
    y[i] = acc;
  }
  return y;
}

inline ComplexMatrix to_complex(const RealMatrix& m) {
  ComplexMatrix out(m.rows(), m.cols());
  for (std::size_t k = 0; k < m.size(); ++k) out.data()[k] = m.data()[k];
  return out;
}

/// ‖A^H A − I‖_F, the unitarity defect.
inline double unitarity_defect(const ComplexMatrix& u) {
  auto g = matmul(adjoint(u), u);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) -= 1.0;
  return frobenius_norm(g);
}

inline void require_square(const ComplexMatrix& m, const char* what) {
  if (!m.square()) {
    fail(ErrorCode::DimensionMismatch, std::string(what) + " is " + std::to_string(m.rows()) +
                                           "x" + std::to_string(m.cols()) + ", expected square");
  }
}

inline void require_finite(const ComplexMatrix& m, const char* what) {
  if (!m.all_finite()) fail(ErrorCode::NonFiniteInput, std::string(what) + " has NaN/Inf entries");
}

}  // namespace pencil_guard
