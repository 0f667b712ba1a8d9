#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "spirit/error.hpp"

namespace spirit {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " by " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

inline Matrix operator+(Matrix a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("matrix add");
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
  return a;
}

inline Matrix operator-(Matrix a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("matrix sub");
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] -= b.data()[i];
  return a;
}

inline Matrix operator*(double s, Matrix a) {
  for (auto& v : a.data()) v *= s;
  return a;
}

inline double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return std::sqrt(s);
}

inline double max_abs(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data()) s = std::max(s, std::abs(v));
  return s;
}

/// C x H x W feature tensor, channel-major.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0)
      : c_(channels), h_(height), w_(width), data_(channels * height * width, fill) {}

  std::size_t channels() const noexcept { return c_; }
  std::size_t height() const noexcept { return h_; }
  std::size_t width() const noexcept { return w_; }
  std::size_t tokens() const noexcept { return h_ * w_; }

  double& at(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * h_ + y) * w_ + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data_[(c * h_ + y) * w_ + x]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Matrix plane(std::size_t c) const {
    Matrix m(h_, w_);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(c * h_ * w_), h_ * w_, m.data().begin());
    return m;
  }

  void set_plane(std::size_t c, const Matrix& m) {
    if (m.rows() != h_ || m.cols() != w_) throw ShapeError("plane size mismatch");
    std::copy(m.data().begin(), m.data().end(),
              data_.begin() + static_cast<std::ptrdiff_t>(c * h_ * w_));
  }

  /// C x N view with token index n = y * W + x.
  Matrix flatten() const { return Matrix(c_, h_ * w_, data_); }

  static Tensor3 from_flat(const Matrix& flat, std::size_t height, std::size_t width) {
    if (flat.cols() != height * width) throw ShapeError("token count does not match grid");
    Tensor3 t(flat.rows(), height, width);
    std::copy(flat.data().begin(), flat.data().end(), t.data_.begin());
    return t;
  }

  bool operator==(const Tensor3&) const = default;

 private:
  std::size_t c_ = 0, h_ = 0, w_ = 0;
  std::vector<double> data_;
};

struct GridSize {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t cells() const noexcept { return height * width; }
  bool operator==(const GridSize&) const = default;
};

}  // namespace spirit
