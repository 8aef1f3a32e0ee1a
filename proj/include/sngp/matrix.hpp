#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "sngp/error.hpp"

namespace sngp {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw InvalidArgument("Matrix: buffer size does not match shape");
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw InvalidArgument("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& buffer() const noexcept { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Matrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {
inline void require_shape(bool ok, const char* what) {
  if (!ok) throw InvalidArgument(std::string("shape mismatch: ") + what);
}
}  // namespace detail

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  detail::require_shape(a.cols() == b.rows(), "matmul inner dimensions");
  Matrix c(a.rows(), b.cols());
  const std::size_t m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* out = c.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double s = a(i, k);
      if (s == 0.0) continue;
      const double* in = b.row(k).data();
      for (std::size_t j = 0; j < m; ++j) out[j] += s * in[j];
    }
  }
  return c;
}

/// a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  detail::require_shape(a.cols() == b.cols(), "matmul_nt inner dimensions");
  return matmul(a, transpose(b));
}

/// a^T * b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  detail::require_shape(a.rows() == b.rows(), "matmul_tn inner dimensions");
  Matrix c(a.cols(), b.cols());
  const std::size_t m = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* in = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double s = a(k, i);
      if (s == 0.0) continue;
      double* out = c.row(i).data();
      for (std::size_t j = 0; j < m; ++j) out[j] += s * in[j];
    }
  }
  return c;
}

/// y = a * x
inline std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
  detail::require_shape(a.cols() == x.size(), "matvec");
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * x[j];
    y[i] = s;
  }
  return y;
}

/// y = a^T * x
inline std::vector<double> matvec_t(const Matrix& a, std::span<const double> x) {
  detail::require_shape(a.rows() == x.size(), "matvec_t");
  std::vector<double> y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    const double s = x[i];
    for (std::size_t j = 0; j < r.size(); ++j) y[j] += s * r[j];
  }
  return y;
}

inline void add_row_vector(Matrix& m, std::span<const double> v) {
  detail::require_shape(m.cols() == v.size(), "add_row_vector");
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < v.size(); ++j) r[j] += v[j];
  }
}

inline std::vector<double> column_sums(const Matrix& m) {
  std::vector<double> s(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    for (std::size_t j = 0; j < s.size(); ++j) s[j] += r[j];
  }
  return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline Matrix select_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(m.row(idx[i]).data(), m.cols(), out.row(i).data());
  return out;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  detail::require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

inline double frobenius(const Matrix& a) { return norm2(a.values()); }

}  // namespace sngp
