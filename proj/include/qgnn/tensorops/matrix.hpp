#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace qgnn {

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

inline void check_shape(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch: ") + what);
}

// a[m x k] * b[k x n]
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  check_shape(a.cols == b.rows, "matmul");
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * a.cols;
    double* orow = out.data.data() + i * b.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

// a[k x m]^T * b[k x n]; used for weight gradients.
inline Matrix matmul_transa(const Matrix& a, const Matrix& b) {
  check_shape(a.rows == b.rows, "matmul_transa");
  Matrix out(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = a.data.data() + k * a.cols;
    const double* brow = b.data.data() + k * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* orow = out.data.data() + i * out.cols;
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

// a[m x k] * b[n x k]^T
inline Matrix matmul_transb(const Matrix& a, const Matrix& b) {
  check_shape(a.cols == b.cols, "matmul_transb");
  Matrix out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * a.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = b.data.data() + j * b.cols;
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

inline void add_inplace(Matrix& a, const Matrix& b) {
  check_shape(a.same_shape(b), "add");
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

inline void scale_inplace(Matrix& a, double s) {
  for (double& x : a.data) x *= s;
}

inline bool all_finite(const Matrix& a) {
  for (double x : a.data)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  check_shape(a.same_shape(b), "diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace qgnn
